//! Quadrature on the reference triangle `{(x, y) : x, y >= 0, x + y <= 1}` and
//! on the unit interval.

/// A rule on the reference triangle. Weights sum to the reference area 1/2.
#[derive(Clone, Debug)]
pub struct TriangleRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

/// A rule on `[0, 1]`. Weights sum to 1.
#[derive(Clone, Debug)]
pub struct IntervalRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl TriangleRule {
    /// Symmetric 12-point rule (Dunavant), exact for total degree 6.
    pub fn degree6() -> Self {
        // (barycentric orbit generator, weight normalised to unit area)
        const A: f64 = 0.063_089_014_491_502_228_340_331_602_870_819;
        const WA: f64 = 0.050_844_906_370_206_816_920_936_809_106_869;
        const B: f64 = 0.249_286_745_170_910_421_291_638_553_107_02;
        const WB: f64 = 0.116_786_275_726_379_366_025_289_611_385_58;
        const C: f64 = 0.053_145_049_844_816_947_353_249_671_631_398;
        const D: f64 = 0.310_352_451_033_784_405_416_607_733_956_55;
        const WCD: f64 = 0.082_851_075_618_373_575_193_553_456_420_442;

        let mut points = Vec::with_capacity(12);
        let mut weights = Vec::with_capacity(12);
        for (a, w) in [(A, WA), (B, WB)] {
            let b = 1.0 - 2.0 * a;
            for p in [[a, a], [b, a], [a, b]] {
                points.push(p);
                weights.push(0.5 * w);
            }
        }
        let e = 1.0 - C - D;
        for p in [[C, D], [D, C], [C, e], [e, C], [D, e], [e, D]] {
            points.push(p);
            weights.push(0.5 * WCD);
        }
        Self { points, weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

impl IntervalRule {
    /// Four-point Gauss-Legendre, exact for degree 7.
    pub fn gauss4() -> Self {
        let s = (6.0f64 / 5.0).sqrt();
        let x_inner = (3.0 / 7.0 - 2.0 / 7.0 * s).sqrt();
        let x_outer = (3.0 / 7.0 + 2.0 / 7.0 * s).sqrt();
        let w_inner = (18.0 + 30f64.sqrt()) / 36.0;
        let w_outer = (18.0 - 30f64.sqrt()) / 36.0;
        let nodes = [
            (-x_outer, w_outer),
            (-x_inner, w_inner),
            (x_inner, w_inner),
            (x_outer, w_outer),
        ];
        Self {
            points: nodes.iter().map(|(x, _)| 0.5 * (x + 1.0)).collect(),
            weights: nodes.iter().map(|(_, w)| 0.5 * w).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    #[test]
    fn triangle_rule_integrates_monomials_up_to_degree_six() {
        let rule = TriangleRule::degree6();
        assert!(rule.weights.iter().all(|&w| w > 0.0));
        for total in 0..=6u32 {
            for i in 0..=total {
                let j = total - i;
                // int_T x^i y^j = i! j! / (i + j + 2)!
                let exact = factorial(i) * factorial(j) / factorial(i + j + 2);
                let approx: f64 = rule
                    .points
                    .iter()
                    .zip(&rule.weights)
                    .map(|(p, w)| w * p[0].powi(i as i32) * p[1].powi(j as i32))
                    .sum();
                assert!(
                    (approx - exact).abs() < 1e-14,
                    "x^{i} y^{j}: {approx} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn interval_rule_integrates_degree_seven() {
        let rule = IntervalRule::gauss4();
        assert!(rule.weights.iter().all(|&w| w > 0.0));
        for k in 0..=7 {
            let approx: f64 = rule
                .points
                .iter()
                .zip(&rule.weights)
                .map(|(x, w)| w * x.powi(k))
                .sum();
            assert!((approx - 1.0 / (k as f64 + 1.0)).abs() < 1e-15, "degree {k}");
        }
    }
}

//! Conforming triangulations of polygons with tagged boundary facets.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometric tolerance used by the boundary predicates.
pub const GEOM_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Diagonal {
    /// One diagonal per square, from lower-left to upper-right.
    Right,
    /// Both diagonals; a vertex is added at every square centre.
    Crossed,
}

/// Boundary condition class of a facet. Boundary data (Dirichlet values,
/// slip law) are attached to the problem, not the mesh.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FacetTag {
    Dirichlet,
    Slip,
}

impl FacetTag {
    pub fn as_str(self) -> &'static str {
        match self {
            FacetTag::Dirichlet => "dirichlet",
            FacetTag::Slip => "slip",
        }
    }
}

#[derive(Clone, Debug)]
pub struct BoundaryFacet {
    /// Endpoints, ordered counterclockwise with respect to `cell`.
    pub vertices: [usize; 2],
    pub cell: usize,
    /// Local edge of `cell`; local edge `i` is opposite local vertex `i`.
    pub local_edge: usize,
    /// Global edge index.
    pub edge: usize,
    pub normal: [f64; 2],
    pub h: f64,
    pub tag: Option<FacetTag>,
}

#[derive(Clone, Debug)]
pub struct FacetGeometry {
    pub normal: [f64; 2],
    pub h: f64,
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Mesh {
    pub vertices: Vec<[f64; 2]>,
    /// Counterclockwise vertex triples.
    pub cells: Vec<[usize; 3]>,
    /// Unique edges as sorted vertex pairs.
    pub edges: Vec<[usize; 2]>,
    /// Global edge of each local edge; local edge `i` joins local vertices
    /// `i + 1` and `i + 2` (mod 3).
    pub cell_edges: Vec<[usize; 3]>,
    pub facets: Vec<BoundaryFacet>,
    edge_facet: Vec<Option<usize>>,
    cell_diameters: Vec<f64>,
}

impl Mesh {
    /// Builds a mesh from vertices and counterclockwise cells, deriving the
    /// edge list, boundary facets, normals and diameters.
    pub fn from_cells(vertices: Vec<[f64; 2]>, cells: Vec<[usize; 3]>) -> Result<Self> {
        for (k, c) in cells.iter().enumerate() {
            let area = signed_area(vertices[c[0]], vertices[c[1]], vertices[c[2]]);
            if area <= 0.0 {
                return Err(Error::DegenerateCell { cell: k, area });
            }
        }

        let mut edge_index: HashMap<[usize; 2], usize> = HashMap::new();
        let mut edges = Vec::new();
        let mut edge_cells: Vec<Vec<(usize, usize)>> = Vec::new();
        let mut cell_edges = Vec::with_capacity(cells.len());
        for (k, c) in cells.iter().enumerate() {
            let mut ce = [0; 3];
            for (i, slot) in ce.iter_mut().enumerate() {
                let a = c[(i + 1) % 3];
                let b = c[(i + 2) % 3];
                let key = [a.min(b), a.max(b)];
                let e = *edge_index.entry(key).or_insert_with(|| {
                    edges.push(key);
                    edge_cells.push(Vec::new());
                    edges.len() - 1
                });
                edge_cells[e].push((k, i));
                *slot = e;
            }
            cell_edges.push(ce);
        }

        let mut facets = Vec::new();
        let mut edge_facet = vec![None; edges.len()];
        for (e, adj) in edge_cells.iter().enumerate() {
            match adj.len() {
                1 => {
                    let (k, i) = adj[0];
                    let c = cells[k];
                    let a = c[(i + 1) % 3];
                    let b = c[(i + 2) % 3];
                    let (pa, pb) = (vertices[a], vertices[b]);
                    let h = ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt();
                    // a -> b runs counterclockwise, so the outward normal is the
                    // tangent rotated clockwise.
                    let normal = [(pb[1] - pa[1]) / h, -(pb[0] - pa[0]) / h];
                    edge_facet[e] = Some(facets.len());
                    facets.push(BoundaryFacet {
                        vertices: [a, b],
                        cell: k,
                        local_edge: i,
                        edge: e,
                        normal,
                        h,
                        tag: None,
                    });
                }
                2 => {}
                n => {
                    return Err(Error::Config(format!(
                        "non-manifold edge {e} shared by {n} cells"
                    )))
                }
            }
        }

        let cell_diameters = cells
            .iter()
            .map(|c| {
                let mut d: f64 = 0.0;
                for i in 0..3 {
                    let p = vertices[c[i]];
                    let q = vertices[c[(i + 1) % 3]];
                    d = d.max(((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt());
                }
                d
            })
            .collect();

        Ok(Self {
            vertices,
            cells,
            edges,
            cell_edges,
            facets,
            edge_facet,
            cell_diameters,
        })
    }

    /// Structured triangulation of the unit square with `n` squares per side.
    pub fn unit_square(n: usize, diagonal: Diagonal) -> Self {
        Self::rectangle(n, n, 1.0, 1.0, diagonal)
    }

    /// Structured triangulation of `(0, lx) x (0, ly)`.
    pub fn rectangle(nx: usize, ny: usize, lx: f64, ly: f64, diagonal: Diagonal) -> Self {
        assert!(nx >= 1 && ny >= 1, "mesh needs at least one square per side");
        let mut vertices = Vec::new();
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push([lx * i as f64 / nx as f64, ly * j as f64 / ny as f64]);
            }
        }
        let grid = |i: usize, j: usize| j * (nx + 1) + i;
        let mut cells = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                let (v00, v10, v01, v11) = (grid(i, j), grid(i + 1, j), grid(i, j + 1), grid(i + 1, j + 1));
                match diagonal {
                    Diagonal::Right => {
                        cells.push([v00, v10, v11]);
                        cells.push([v00, v11, v01]);
                    }
                    Diagonal::Crossed => {
                        let c = vertices.len();
                        vertices.push([
                            lx * (i as f64 + 0.5) / nx as f64,
                            ly * (j as f64 + 0.5) / ny as f64,
                        ]);
                        cells.push([v00, v10, c]);
                        cells.push([v10, v11, c]);
                        cells.push([v11, v01, c]);
                        cells.push([v01, v00, c]);
                    }
                }
            }
        }
        Self::from_cells(vertices, cells).expect("structured mesh is valid")
    }

    /// Tags every boundary facet through a predicate on its midpoint.
    pub fn tag_boundary<F>(mut self, predicate: F) -> Result<Self>
    where
        F: Fn([f64; 2]) -> Option<FacetTag>,
    {
        for (i, f) in self.facets.iter_mut().enumerate() {
            let a = self.vertices[f.vertices[0]];
            let b = self.vertices[f.vertices[1]];
            let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
            match predicate(mid) {
                Some(tag) => f.tag = Some(tag),
                None => {
                    return Err(Error::UntaggedFacet {
                        facet: i,
                        x: mid[0],
                        y: mid[1],
                    })
                }
            }
        }
        Ok(self)
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn cell_diameter(&self, cell: usize) -> f64 {
        self.cell_diameters[cell]
    }

    pub fn cell_area(&self, cell: usize) -> f64 {
        let c = self.cells[cell];
        signed_area(self.vertices[c[0]], self.vertices[c[1]], self.vertices[c[2]])
    }

    /// Radius of the inscribed circle.
    pub fn cell_inradius(&self, cell: usize) -> f64 {
        let c = self.cells[cell];
        let mut perimeter = 0.0;
        for i in 0..3 {
            let p = self.vertices[c[i]];
            let q = self.vertices[c[(i + 1) % 3]];
            perimeter += ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt();
        }
        2.0 * self.cell_area(cell) / perimeter
    }

    /// Boundary facet attached to a global edge, if the edge lies on the
    /// boundary.
    pub fn facet_of_edge(&self, edge: usize) -> Option<usize> {
        self.edge_facet.get(edge).copied().flatten()
    }

    /// Outward normal, diameter and Gauss points of the boundary facet on
    /// global edge `edge`.
    pub fn facet_geometry(&self, edge: usize) -> Result<FacetGeometry> {
        let f = self
            .facet_of_edge(edge)
            .map(|i| &self.facets[i])
            .ok_or(Error::NotBoundaryFacet(edge))?;
        let a = self.vertices[f.vertices[0]];
        let b = self.vertices[f.vertices[1]];
        let rule = crate::quadrature::IntervalRule::gauss4();
        let points = rule
            .points
            .iter()
            .map(|&s| [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])])
            .collect();
        let weights = rule.weights.iter().map(|w| w * f.h).collect();
        Ok(FacetGeometry {
            normal: f.normal,
            h: f.h,
            points,
            weights,
        })
    }

    pub fn facets_with_tag(&self, tag: FacetTag) -> impl Iterator<Item = (usize, &BoundaryFacet)> {
        self.facets
            .iter()
            .enumerate()
            .filter(move |(_, f)| f.tag == Some(tag))
    }

    /// Plain-text dump: `v x y`, `c i j k`, `f i j tag` lines.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for v in &self.vertices {
            writeln!(out, "v {:.17e} {:.17e}", v[0], v[1]).unwrap();
        }
        for c in &self.cells {
            writeln!(out, "c {} {} {}", c[0], c[1], c[2]).unwrap();
        }
        for f in &self.facets {
            let tag = f.tag.map_or("untagged", FacetTag::as_str);
            writeln!(out, "f {} {} {}", f.vertices[0], f.vertices[1], tag).unwrap();
        }
        out
    }

    /// Index of a cell containing `p` and the reference coordinates of `p`
    /// in it.
    pub fn locate(&self, p: [f64; 2]) -> Option<(usize, [f64; 2])> {
        const TOL: f64 = 1e-10;
        for (k, c) in self.cells.iter().enumerate() {
            let x0 = self.vertices[c[0]];
            let x1 = self.vertices[c[1]];
            let x2 = self.vertices[c[2]];
            let j = [[x1[0] - x0[0], x2[0] - x0[0]], [x1[1] - x0[1], x2[1] - x0[1]]];
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            let d = [p[0] - x0[0], p[1] - x0[1]];
            let xi = (j[1][1] * d[0] - j[0][1] * d[1]) / det;
            let eta = (-j[1][0] * d[0] + j[0][0] * d[1]) / det;
            if xi >= -TOL && eta >= -TOL && xi + eta <= 1.0 + TOL {
                return Some((k, [xi, eta]));
            }
        }
        None
    }
}

pub fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

/// Predicate tagging the top wall `y = 1` as slip and everything else as
/// Dirichlet.
pub fn top_wall_slip(mid: [f64; 2]) -> Option<FacetTag> {
    Some(if (mid[1] - 1.0).abs() < GEOM_TOL {
        FacetTag::Slip
    } else {
        FacetTag::Dirichlet
    })
}

pub fn all_slip(_mid: [f64; 2]) -> Option<FacetTag> {
    Some(FacetTag::Slip)
}

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Edges of the 17-joint COCO keypoint layout (nose, eyes, ears, shoulders,
/// elbows, wrists, hips, knees, ankles).
pub const HUMAN17_EDGES: [(usize, usize); 16] = [
    (0, 1),
    (0, 2),
    (1, 3),
    (2, 4),
    (0, 5),
    (0, 6),
    (5, 7),
    (7, 9),
    (6, 8),
    (8, 10),
    (5, 11),
    (6, 12),
    (11, 13),
    (13, 15),
    (12, 14),
    (14, 16),
];

/// Joint connectivity with a row-normalized adjacency (self-loops included).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonGraph {
    pub num_joints: usize,
    pub edges: Vec<(usize, usize)>,
}

impl SkeletonGraph {
    pub fn new(num_joints: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if num_joints == 0 {
            return Err(Error::invalid("graph needs at least one joint"));
        }
        if let Some(&(a, b)) = edges.iter().find(|(a, b)| *a >= num_joints || *b >= num_joints || a == b) {
            return Err(Error::invalid(format!("bad edge ({a}, {b}) for {num_joints} joints")));
        }
        Ok(Self { num_joints, edges })
    }

    /// A simple path `0 - 1 - ... - (J-1)`.
    pub fn chain(num_joints: usize) -> Result<Self> {
        Self::new(num_joints, (1..num_joints).map(|j| (j - 1, j)).collect())
    }

    pub fn human17() -> Self {
        Self::new(17, HUMAN17_EDGES.to_vec()).expect("static layout is valid")
    }

    /// The human layout for 17 joints, a chain otherwise.
    pub fn default_for(num_joints: usize) -> Result<Self> {
        if num_joints == 17 {
            Ok(Self::human17())
        } else {
            Self::chain(num_joints)
        }
    }

    /// Row-normalized `A + I`.
    pub fn adjacency(&self) -> Array2<f64> {
        let j = self.num_joints;
        let mut a = Array2::<f64>::eye(j);
        for &(u, v) in &self.edges {
            a[[u, v]] = 1.0;
            a[[v, u]] = 1.0;
        }
        for mut row in a.rows_mut() {
            let s: f64 = row.sum();
            row.mapv_inplace(|x| x / s);
        }
        a
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.num_joints];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &(a, b) in &self.edges {
                let next = if a == u {
                    b
                } else if b == u {
                    a
                } else {
                    continue;
                };
                if !seen[next] {
                    seen[next] = true;
                    stack.push(next);
                }
            }
        }
        seen.iter().all(|&s| s)
    }
}

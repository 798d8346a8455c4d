//! The articulated figure: joints, parent links, canonical geometry.
//!
//! Joint coordinates are in heatmap pixels with x right and y down; bone
//! angles are degrees with 0 pointing right and 90 pointing down. Canonical
//! lengths are expressed for a 32x32 heatmap and scaled linearly for other
//! map sizes.

use crate::error::{Error, Result};

/// Joint indices of the 14-joint figure.
pub mod joints {
    pub const HEAD_TOP: usize = 0;
    pub const NECK: usize = 1;
    pub const L_SHOULDER: usize = 2;
    pub const R_SHOULDER: usize = 3;
    pub const L_ELBOW: usize = 4;
    pub const R_ELBOW: usize = 5;
    pub const L_WRIST: usize = 6;
    pub const R_WRIST: usize = 7;
    pub const L_HIP: usize = 8;
    pub const R_HIP: usize = 9;
    pub const L_KNEE: usize = 10;
    pub const R_KNEE: usize = 11;
    pub const L_ANKLE: usize = 12;
    pub const R_ANKLE: usize = 13;
}

/// A bone from `parent` to `joint`, with the canonical direction and the
/// anatomical range the pose sampler may draw from.
#[derive(Debug, Clone)]
pub struct Bone {
    pub joint: usize,
    pub parent: usize,
    /// Canonical length in 32-map pixels.
    pub length: f64,
    pub base_angle_deg: f64,
    /// Half-width of the sampled angle range.
    pub jitter_deg: f64,
    /// When set, `base_angle_deg` is measured from the parent bone's
    /// direction (elbow and knee articulation); otherwise it is absolute.
    pub relative: bool,
}

#[derive(Debug, Clone)]
pub struct Skeleton {
    names: Vec<&'static str>,
    parent: Vec<Option<usize>>,
    bones: Vec<Bone>,
    mirror: Vec<(usize, usize)>,
}

impl Skeleton {
    /// The 14-joint figure: head-top, neck, then shoulders, elbows, wrists,
    /// hips, knees and ankles for both sides.
    pub fn lsp14() -> Skeleton {
        use joints::*;
        let names = vec![
            "head_top", "neck", "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist",
            "r_wrist", "l_hip", "r_hip", "l_knee", "r_knee", "l_ankle", "r_ankle",
        ];
        let mut parent = vec![None; 14];
        let bone = |joint, parent, length, base, jitter, relative| Bone {
            joint,
            parent,
            length,
            base_angle_deg: base,
            jitter_deg: jitter,
            relative,
        };
        // topological order: parents precede children
        let bones = vec![
            bone(HEAD_TOP, NECK, 3.4, -90.0, 14.0, false),
            bone(L_SHOULDER, NECK, 2.5, 170.0, 9.0, false),
            bone(R_SHOULDER, NECK, 2.5, 10.0, 9.0, false),
            bone(L_ELBOW, L_SHOULDER, 3.4, 115.0, 38.0, false),
            bone(R_ELBOW, R_SHOULDER, 3.4, 65.0, 38.0, false),
            bone(L_WRIST, L_ELBOW, 3.4, 0.0, 48.0, true),
            bone(R_WRIST, R_ELBOW, 3.4, 0.0, 48.0, true),
            bone(L_HIP, NECK, 7.8, 98.0, 6.0, false),
            bone(R_HIP, NECK, 7.8, 82.0, 6.0, false),
            bone(L_KNEE, L_HIP, 4.4, 95.0, 28.0, false),
            bone(R_KNEE, R_HIP, 4.4, 85.0, 28.0, false),
            bone(L_ANKLE, L_KNEE, 4.4, 0.0, 32.0, true),
            bone(R_ANKLE, R_KNEE, 4.4, 0.0, 32.0, true),
        ];
        for b in &bones {
            parent[b.joint] = Some(b.parent);
        }
        let mirror = vec![
            (L_SHOULDER, R_SHOULDER),
            (L_ELBOW, R_ELBOW),
            (L_WRIST, R_WRIST),
            (L_HIP, R_HIP),
            (L_KNEE, R_KNEE),
            (L_ANKLE, R_ANKLE),
        ];
        let s = Skeleton { names, parent, bones, mirror };
        s.validate().expect("built-in skeleton is valid");
        s
    }

    pub fn num_joints(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, k: usize) -> &'static str {
        self.names[k]
    }

    pub fn names(&self) -> &[&'static str] {
        &self.names
    }

    pub fn parent(&self, k: usize) -> Option<usize> {
        self.parent[k]
    }

    pub fn bones(&self) -> &[Bone] {
        &self.bones
    }

    pub fn mirror_pairs(&self) -> &[(usize, usize)] {
        &self.mirror
    }

    /// Mirror partner of a joint; unpaired joints map to themselves.
    pub fn mirror_of(&self, k: usize) -> usize {
        for &(a, b) in &self.mirror {
            if a == k {
                return b;
            }
            if b == k {
                return a;
            }
        }
        k
    }

    /// Parent links as undirected edges (the kinematic tree).
    pub fn tree_edges(&self) -> Vec<(usize, usize)> {
        self.bones
            .iter()
            .map(|b| (b.joint.min(b.parent), b.joint.max(b.parent)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_joints();
        let roots = self.parent.iter().filter(|p| p.is_none()).count();
        if roots != 1 {
            return Err(Error::Graph(format!("skeleton must have exactly one root, found {roots}")));
        }
        // parent relation must reach the root from every joint without cycles
        for start in 0..k {
            let mut seen = 0;
            let mut cur = start;
            while let Some(p) = self.parent[cur] {
                if p >= k {
                    return Err(Error::Graph(format!("joint {cur} has out-of-range parent {p}")));
                }
                cur = p;
                seen += 1;
                if seen > k {
                    return Err(Error::Graph(format!("parent cycle reachable from joint {start}")));
                }
            }
        }
        for &(a, b) in &self.mirror {
            if a == b || a >= k || b >= k {
                return Err(Error::Graph(format!("bad mirror pair ({a}, {b})")));
            }
            if self.mirror_of(b) != a {
                return Err(Error::Graph(format!("mirror pair ({a}, {b}) is not involutive")));
            }
        }
        Ok(())
    }
}

//! BODY_25 skeleton topology, pose and motion containers, bounding-box
//! normalization, missing-joint recovery and spline smoothing.

use serde::{Deserialize, Serialize};

use crate::audio::StyleLabel;

pub const JOINTS: usize = 25;
pub const ROOT: usize = 8;
/// Confidence assigned to joints filled in by [`recover_missing_joints`].
pub const RECOVERED_CONFIDENCE: f64 = 0.5;
pub const DEFAULT_FPS: u32 = 24;
pub const DEFAULT_KNOT_STRIDE: usize = 4;

pub const JOINT_NAMES: [&str; JOINTS] = [
    "Nose", "Neck", "RShoulder", "RElbow", "RWrist", "LShoulder", "LElbow", "LWrist", "MidHip",
    "RHip", "RKnee", "RAnkle", "LHip", "LKnee", "LAnkle", "REye", "LEye", "REar", "LEar",
    "LBigToe", "LSmallToe", "LHeel", "RBigToe", "RSmallToe", "RHeel",
];

/// `(parent, child)` pairs of the OpenPose BODY_25 tree rooted at MidHip.
pub const BODY25_EDGES: [(usize, usize); JOINTS - 1] = [
    (8, 1), (1, 0), (1, 2), (2, 3), (3, 4), (1, 5), (5, 6), (6, 7),
    (8, 9), (9, 10), (10, 11), (8, 12), (12, 13), (13, 14),
    (0, 15), (15, 17), (0, 16), (16, 18),
    (14, 19), (19, 20), (14, 21), (11, 22), (22, 23), (11, 24),
];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SkeletonError {
    #[error("degenerate pose: bounding box diagonal is zero")]
    DegeneratePose,
    #[error("joints never observed with their parent: {0:?}")]
    UnrecoverableJoints(Vec<&'static str>),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed motion: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone)]
pub struct SkeletonTopology {
    pub edges: Vec<(usize, usize)>,
    pub names: Vec<&'static str>,
    parent: Vec<Option<usize>>,
}

impl SkeletonTopology {
    pub fn body25() -> SkeletonTopology {
        let mut parent = vec![None; JOINTS];
        for &(p, c) in &BODY25_EDGES {
            parent[c] = Some(p);
        }
        SkeletonTopology {
            edges: BODY25_EDGES.to_vec(),
            names: JOINT_NAMES.to_vec(),
            parent,
        }
    }

    pub fn joint_count(&self) -> usize {
        self.names.len()
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        self.parent[j]
    }

    pub fn root(&self) -> usize {
        (0..self.joint_count()).find(|&j| self.parent[j].is_none()).expect("tree has a root")
    }

    /// Joints ordered so every parent precedes its children.
    pub fn topological_order(&self) -> Vec<usize> {
        let mut order = vec![self.root()];
        let mut i = 0;
        while i < order.len() {
            let p = order[i];
            order.extend(self.edges.iter().filter(|e| e.0 == p).map(|e| e.1));
            i += 1;
        }
        order
    }

    /// Symmetric adjacency with self-loops.
    pub fn adjacency(&self) -> Vec<Vec<bool>> {
        let n = self.joint_count();
        let mut a = vec![vec![false; n]; n];
        for (i, row) in a.iter_mut().enumerate() {
            row[i] = true;
        }
        for &(p, c) in &self.edges {
            a[p][c] = true;
            a[c][p] = true;
        }
        a
    }

    /// Checks the tree invariants: `n - 1` edges, one parent per non-root
    /// joint, everything reachable from the root.
    pub fn validate(&self) -> Result<(), SkeletonError> {
        let n = self.joint_count();
        if self.edges.len() != n - 1 {
            return Err(SkeletonError::Malformed(format!("{} edges for {n} joints", self.edges.len())));
        }
        let roots = (0..n).filter(|&j| self.parent[j].is_none()).count();
        if roots != 1 {
            return Err(SkeletonError::Malformed(format!("{roots} roots")));
        }
        if self.topological_order().len() != n {
            return Err(SkeletonError::Malformed("not connected".into()));
        }
        Ok(())
    }
}

/// One frame: 25 `(x, y)` joints plus per-joint confidence (0 = missing).
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub joints: [[f64; 2]; JOINTS],
    pub confidence: [f64; JOINTS],
}

impl Pose {
    pub fn new(joints: [[f64; 2]; JOINTS]) -> Pose {
        Pose { joints, confidence: [1.0; JOINTS] }
    }

    pub fn is_present(&self, j: usize) -> bool {
        self.confidence[j] > 0.0
    }

    /// `(min_x, min_y, max_x, max_y)` over present joints.
    pub fn bbox(&self) -> Option<[f64; 4]> {
        let mut bb = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        let mut any = false;
        for j in (0..JOINTS).filter(|&j| self.is_present(j)) {
            let [x, y] = self.joints[j];
            bb[0] = bb[0].min(x);
            bb[1] = bb[1].min(y);
            bb[2] = bb[2].max(x);
            bb[3] = bb[3].max(y);
            any = true;
        }
        any.then_some(bb)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Motion {
    pub frames: Vec<Pose>,
    pub fps: u32,
    pub style: Option<StyleLabel>,
}

#[derive(Serialize, Deserialize)]
struct MotionJson {
    fps: u32,
    style: Option<StyleLabel>,
    frames: Vec<Vec<[f64; 3]>>,
}

impl Motion {
    pub fn new(frames: Vec<Pose>, fps: u32, style: Option<StyleLabel>) -> Motion {
        Motion { frames, fps, style }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Frames `start..start + len` as a new motion.
    pub fn slice(&self, start: usize, len: usize) -> Motion {
        Motion {
            frames: self.frames[start..start + len].to_vec(),
            fps: self.fps,
            style: self.style,
        }
    }

    /// Channels-first layout `[coord][frame][joint]`, i.e. a `(2, N, 25)`
    /// tensor body.
    pub fn to_channels(&self) -> Vec<f64> {
        let n = self.len();
        let mut out = vec![0.0; 2 * n * JOINTS];
        for (t, p) in self.frames.iter().enumerate() {
            for j in 0..JOINTS {
                out[t * JOINTS + j] = p.joints[j][0];
                out[(n + t) * JOINTS + j] = p.joints[j][1];
            }
        }
        out
    }

    pub fn from_channels(data: &[f64], fps: u32, style: Option<StyleLabel>) -> Result<Motion, SkeletonError> {
        if data.is_empty() || data.len() % (2 * JOINTS) != 0 {
            return Err(SkeletonError::Malformed(format!("{} values is not (2, N, 25)", data.len())));
        }
        let n = data.len() / (2 * JOINTS);
        let frames = (0..n)
            .map(|t| {
                let mut joints = [[0.0; 2]; JOINTS];
                for (j, jt) in joints.iter_mut().enumerate() {
                    *jt = [data[t * JOINTS + j], data[(n + t) * JOINTS + j]];
                }
                Pose::new(joints)
            })
            .collect();
        Ok(Motion { frames, fps, style })
    }

    pub fn to_json(&self) -> String {
        let doc = MotionJson {
            fps: self.fps,
            style: self.style,
            frames: self
                .frames
                .iter()
                .map(|p| (0..JOINTS).map(|j| [p.joints[j][0], p.joints[j][1], p.confidence[j]]).collect())
                .collect(),
        };
        serde_json::to_string(&doc).expect("motion serializes")
    }

    pub fn from_json(text: &str) -> Result<Motion, SkeletonError> {
        let doc: MotionJson =
            serde_json::from_str(text).map_err(|e| SkeletonError::Malformed(e.to_string()))?;
        if doc.frames.is_empty() {
            return Err(SkeletonError::Malformed("no frames".into()));
        }
        let mut frames = Vec::with_capacity(doc.frames.len());
        for (t, f) in doc.frames.iter().enumerate() {
            if f.len() != JOINTS {
                return Err(SkeletonError::Malformed(format!("frame {t} has {} joints", f.len())));
            }
            let mut pose = Pose::new([[0.0; 2]; JOINTS]);
            for (j, &[x, y, c]) in f.iter().enumerate() {
                if !(0.0..=1.0).contains(&c) {
                    return Err(SkeletonError::Malformed(format!("frame {t} joint {j}: confidence {c}")));
                }
                if c > 0.0 && !(x.is_finite() && y.is_finite()) {
                    return Err(SkeletonError::Malformed(format!("frame {t} joint {j}: non-finite")));
                }
                pose.joints[j] = [x, y];
                pose.confidence[j] = c;
            }
            frames.push(pose);
        }
        Ok(Motion { frames, fps: doc.fps, style: doc.style })
    }
}

fn normalize_with_bbox(p: &Pose, bb: [f64; 4]) -> Result<Pose, SkeletonError> {
    let (du, dv) = (bb[2] - bb[0], bb[3] - bb[1]);
    let delta = (du * du + dv * dv).sqrt();
    if delta <= 0.0 || !delta.is_finite() {
        return Err(SkeletonError::DegeneratePose);
    }
    let mut out = p.clone();
    for j in 0..JOINTS {
        let [x, y] = p.joints[j];
        out.joints[j] = [
            (x - bb[0] - du / 2.0) / delta + 0.5,
            (y - bb[1] - dv / 2.0) / delta + 0.5,
        ];
    }
    Ok(out)
}

/// Maps the bounding box of the present joints to a box centred at
/// `(0.5, 0.5)` with unit diagonal.
pub fn normalize_pose(p: &Pose) -> Result<Pose, SkeletonError> {
    let bb = p.bbox().ok_or(SkeletonError::DegeneratePose)?;
    normalize_with_bbox(p, bb)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeMode {
    #[default]
    PerFrame,
    PerSequence,
}

pub fn normalize_motion(m: &Motion, mode: NormalizeMode) -> Result<Motion, SkeletonError> {
    let frames = match mode {
        NormalizeMode::PerFrame => m.frames.iter().map(normalize_pose).collect::<Result<_, _>>()?,
        NormalizeMode::PerSequence => {
            let bb = m
                .frames
                .iter()
                .filter_map(Pose::bbox)
                .reduce(|a, b| [a[0].min(b[0]), a[1].min(b[1]), a[2].max(b[2]), a[3].max(b[3])])
                .ok_or(SkeletonError::DegeneratePose)?;
            m.frames.iter().map(|p| normalize_with_bbox(p, bb)).collect::<Result<_, _>>()?
        }
    };
    Ok(Motion { frames, fps: m.fps, style: m.style })
}

/// Inverse placement of normalized poses on a square canvas: the unit
/// diagonal spans `fill` of the canvas side, centred.
pub fn denormalize_motion(m: &Motion, canvas: f64, fill: f64) -> Motion {
    let scale = canvas * fill;
    let mut out = m.clone();
    for p in &mut out.frames {
        for j in p.joints.iter_mut() {
            *j = [(j[0] - 0.5) * scale + canvas / 2.0, (j[1] - 0.5) * scale + canvas / 2.0];
        }
    }
    out
}

/// Fills missing joints by replaying the parent's displacement from the
/// nearest frame where both joint and parent were observed (ties go to the
/// earlier frame). Observed values are left untouched.
pub fn recover_missing_joints(m: &Motion, topo: &SkeletonTopology) -> Result<Motion, SkeletonError> {
    let n = m.len();
    let observed = |t: usize, j: usize| m.frames[t].is_present(j);
    let mut out = m.clone();
    let mut failed = Vec::new();
    for j in topo.topological_order() {
        let missing: Vec<usize> = (0..n).filter(|&t| !observed(t, j)).collect();
        if missing.is_empty() {
            continue;
        }
        let parent = topo.parent(j);
        let valid: Vec<usize> = (0..n)
            .filter(|&t| observed(t, j) && parent.is_none_or(|p| observed(t, p)))
            .collect();
        if valid.is_empty() {
            failed.push(topo.names[j]);
            continue;
        }
        for t in missing {
            // nearest valid frame, earlier frame on ties
            let t_ref = *valid
                .iter()
                .min_by_key(|&&r| (r.abs_diff(t), r))
                .expect("non-empty");
            let mut pos = m.frames[t_ref].joints[j];
            if let Some(p) = parent {
                let now = out.frames[t].joints[p];
                let then = m.frames[t_ref].joints[p];
                pos = [pos[0] + now[0] - then[0], pos[1] + now[1] - then[1]];
            }
            out.frames[t].joints[j] = pos;
            out.frames[t].confidence[j] = RECOVERED_CONFIDENCE;
        }
    }
    if failed.is_empty() {
        Ok(out)
    } else {
        Err(SkeletonError::UnrecoverableJoints(failed))
    }
}

/// Natural cubic spline through `(xs[i], ys[i])`, evaluated at `at`.
pub fn natural_cubic_spline(xs: &[f64], ys: &[f64], at: &[f64]) -> Vec<f64> {
    let n = xs.len();
    assert!(n >= 2 && ys.len() == n);
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    // second derivatives, zero at both ends
    let mut m2 = vec![0.0; n];
    if n > 2 {
        let k = n - 2;
        let mut diag = vec![0.0; k];
        let mut upper = vec![0.0; k];
        let mut rhs = vec![0.0; k];
        for i in 0..k {
            diag[i] = 2.0 * (h[i] + h[i + 1]);
            upper[i] = h[i + 1];
            rhs[i] = 6.0 * ((ys[i + 2] - ys[i + 1]) / h[i + 1] - (ys[i + 1] - ys[i]) / h[i]);
        }
        // Thomas algorithm; sub-diagonal entry i is h[i]
        for i in 1..k {
            let w = h[i] / diag[i - 1];
            diag[i] -= w * upper[i - 1];
            rhs[i] -= w * rhs[i - 1];
        }
        m2[k] = rhs[k - 1] / diag[k - 1];
        for i in (0..k - 1).rev() {
            m2[i + 1] = (rhs[i] - upper[i] * m2[i + 2]) / diag[i];
        }
    }
    at.iter()
        .map(|&x| {
            let seg = match xs.iter().position(|&k| k > x) {
                Some(0) => 0,
                Some(p) => p - 1,
                None => n - 2,
            }
            .min(n - 2);
            let (x0, x1, hh) = (xs[seg], xs[seg + 1], h[seg]);
            let a = (x1 - x) / hh;
            let b = (x - x0) / hh;
            a * ys[seg]
                + b * ys[seg + 1]
                + ((a * a * a - a) * m2[seg] + (b * b * b - b) * m2[seg + 1]) * hh * hh / 6.0
        })
        .collect()
}

/// Knot frames used by [`smooth_motion`]: every `stride`-th frame plus
/// the last one.
pub fn knot_frames(n: usize, stride: usize) -> Vec<usize> {
    let mut knots: Vec<usize> = (0..n).step_by(stride).collect();
    if *knots.last().expect("n >= 1") != n - 1 {
        knots.push(n - 1);
    }
    knots
}

/// Refits every joint coordinate with a natural cubic spline through the
/// knot frames and resamples all frames.
pub fn smooth_motion(m: &Motion, knot_stride: usize) -> Result<Motion, SkeletonError> {
    if knot_stride < 1 {
        return Err(SkeletonError::InvalidArgument("knot_stride must be at least 1".into()));
    }
    let n = m.len();
    if n < 2 * knot_stride || n < 2 {
        return Err(SkeletonError::InvalidArgument(format!(
            "{n} frames is too short for knot stride {knot_stride}"
        )));
    }
    let knots = knot_frames(n, knot_stride);
    let xs: Vec<f64> = knots.iter().map(|&k| k as f64).collect();
    let at: Vec<f64> = (0..n).map(|t| t as f64).collect();
    let mut out = m.clone();
    for j in 0..JOINTS {
        for c in 0..2 {
            let ys: Vec<f64> = knots.iter().map(|&k| m.frames[k].joints[j][c]).collect();
            let fit = natural_cubic_spline(&xs, &ys, &at);
            for (t, v) in fit.into_iter().enumerate() {
                out.frames[t].joints[j][c] = v;
            }
            // knots reproduce exactly
            for &k in &knots {
                out.frames[k].joints[j][c] = m.frames[k].joints[j][c];
            }
        }
    }
    Ok(out)
}

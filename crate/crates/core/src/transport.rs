//! Feature-space geometry of the threat model: the label-aware pseudo-distance,
//! dual norms and the alignment map `h`, empirical Wasserstein distances and
//! projection back onto a Wasserstein ball.

use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, Sample};
use crate::error::{Error, Result};

/// Norm / Wasserstein index. Only `Two` and `Inf` are admissible as `p` or
/// `r`; `One` appears as their conjugate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NormIndex {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "inf")]
    Inf,
}

impl NormIndex {
    pub fn conjugate(self) -> Self {
        match self {
            Self::One => Self::Inf,
            Self::Two => Self::Two,
            Self::Inf => Self::One,
        }
    }

    /// Finite exponent value; `None` for `Inf`.
    pub fn exponent(self) -> Option<f64> {
        match self {
            Self::One => Some(1.0),
            Self::Two => Some(2.0),
            Self::Inf => None,
        }
    }
}

impl std::str::FromStr for NormIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(Self::One),
            "2" => Ok(Self::Two),
            "inf" => Ok(Self::Inf),
            other => Err(Error::InvalidConfig(format!(
                "norm index must be 1, 2 or inf, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for NormIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::One => "1",
            Self::Two => "2",
            Self::Inf => "inf",
        })
    }
}

pub fn norm(v: &[f64], index: NormIndex) -> f64 {
    match index {
        NormIndex::One => v.iter().map(|x| x.abs()).sum(),
        NormIndex::Two => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        NormIndex::Inf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
    }
}

/// `‖v‖_s` where `s` is the dual index of the pixel norm.
pub fn dual_norm(v: &[f64], s: NormIndex) -> f64 {
    norm(v, s)
}

/// The map with `⟨h(v), v⟩ = ‖v‖_s`: `sgn(v)` for `s = 1`, `v / ‖v‖_2` for
/// `s = 2`. Zero maps to zero.
pub fn h_map(v: &[f64], s: NormIndex) -> Vec<f64> {
    match s {
        NormIndex::One => v.iter().map(|&x| sign(x)).collect(),
        NormIndex::Two => {
            let n = norm(v, NormIndex::Two);
            if n == 0.0 {
                vec![0.0; v.len()]
            } else {
                v.iter().map(|x| x / n).collect()
            }
        }
        NormIndex::Inf => {
            // dual of l1: put the mass on one largest coordinate
            let mut out = vec![0.0; v.len()];
            if let Some((k, _)) = v
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
            {
                out[k] = sign(v[k]);
            }
            out
        }
    }
}

pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Wasserstein ball `B_δ` with image-wise index `p` and pixel-wise index `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreatModel {
    p: NormIndex,
    r: NormIndex,
    delta: f64,
}

impl ThreatModel {
    pub fn new(p: NormIndex, r: NormIndex, delta: f64) -> Result<Self> {
        for (name, idx) in [("p", p), ("r", r)] {
            if idx == NormIndex::One {
                return Err(Error::InvalidConfig(format!("{name} must be 2 or inf")));
            }
        }
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "budget must be finite and >= 0, got {delta}"
            )));
        }
        Ok(Self { p, r, delta })
    }

    pub fn p(&self) -> NormIndex {
        self.p
    }

    pub fn r(&self) -> NormIndex {
        self.r
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Conjugate of `p`.
    pub fn q(&self) -> NormIndex {
        self.p.conjugate()
    }

    /// Conjugate of `r`.
    pub fn s(&self) -> NormIndex {
        self.r.conjugate()
    }

    /// `q` as a number (1 or 2).
    pub fn q_exponent(&self) -> f64 {
        self.q().exponent().expect("q is finite for admissible p")
    }

    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        Self::new(self.p, self.r, delta)
    }
}

/// `‖x − x'‖_r` when labels agree, `+∞` otherwise.
pub fn pseudo_distance(a: &Sample, b: &Sample, r: NormIndex) -> f64 {
    if a.y != b.y {
        return f64::INFINITY;
    }
    raw_distance(&a.x, &b.x, r)
}

pub(crate) fn raw_distance(a: &[f64], b: &[f64], r: NormIndex) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(u, v)| v - u).collect();
    norm(&diff, r)
}

/// Aggregate per-pair ground distances into `W_p`: the `p`-mean for finite
/// `p`, the maximum for `p = ∞`.
pub fn aggregate(distances: &[f64], p: NormIndex) -> f64 {
    match p {
        NormIndex::Inf => distances.iter().fold(0.0, |m, &d| m.max(d)),
        _ => {
            let e = p.exponent().expect("finite");
            let mean = distances.iter().map(|d| d.powf(e)).sum::<f64>() / distances.len() as f64;
            mean.powf(1.0 / e)
        }
    }
}

/// A bijection between two equal-size empirical measures.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    /// Sample `i` of the source is matched with sample `perm[i]` of the target.
    pub perm: Vec<usize>,
    /// Ground distance of each matched pair (`+∞` on label mismatch).
    pub distances: Vec<f64>,
    /// `W_p` of the plan.
    pub cost: f64,
}

impl TransportPlan {
    pub fn identity(len: usize) -> Vec<usize> {
        (0..len).collect()
    }

    fn from_perm(
        perm: Vec<usize>,
        src: &[Vec<f64>],
        src_labels: &[usize],
        dst: &[Vec<f64>],
        dst_labels: &[usize],
        p: NormIndex,
        r: NormIndex,
    ) -> Self {
        let distances: Vec<f64> = perm
            .iter()
            .enumerate()
            .map(|(i, &j)| {
                if src_labels[i] != dst_labels[j] {
                    f64::INFINITY
                } else {
                    raw_distance(&src[i], &dst[j], r)
                }
            })
            .collect();
        let cost = aggregate(&distances, p);
        Self {
            perm,
            distances,
            cost,
        }
    }
}

/// `W_p` between `src` and `dst` under the given plan (`None` = identity).
pub fn empirical_wasserstein(
    src: &LabeledDataset,
    dst: &LabeledDataset,
    threat: &ThreatModel,
    plan: Option<&[usize]>,
) -> Result<f64> {
    if src.len() != dst.len() {
        return Err(Error::Dimension {
            expected: src.len(),
            found: dst.len(),
        });
    }
    let perm = plan
        .map(<[usize]>::to_vec)
        .unwrap_or_else(|| TransportPlan::identity(src.len()));
    validate_perm(&perm, src.len())?;
    Ok(TransportPlan::from_perm(
        perm,
        &src.features(),
        &src.labels(),
        &dst.features(),
        &dst.labels(),
        threat.p(),
        threat.r(),
    )
    .cost)
}

/// Distance under identity coupling between a dataset and raw (possibly
/// out-of-box) features with the same labels.
pub fn identity_distance(
    orig: &LabeledDataset,
    features: &[Vec<f64>],
    threat: &ThreatModel,
) -> f64 {
    let d: Vec<f64> = orig
        .samples()
        .iter()
        .zip(features)
        .map(|(s, x)| raw_distance(&s.x, x, threat.r()))
        .collect();
    aggregate(&d, threat.p())
}

fn validate_perm(perm: &[usize], len: usize) -> Result<()> {
    let mut seen = vec![false; len];
    if perm.len() != len {
        return Err(Error::Dimension {
            expected: len,
            found: perm.len(),
        });
    }
    for &j in perm {
        if j >= len || std::mem::replace(&mut seen[j], true) {
            return Err(Error::InvalidConfig(
                "transport plan is not a bijection".into(),
            ));
        }
    }
    Ok(())
}

/// Largest label class accepted by [`exact_ot`].
pub const EXACT_OT_CAP: usize = 512;

/// Minimum-cost bijection under `d^p` (bottleneck objective for `p = ∞`),
/// solved independently inside each label class.
pub fn exact_ot(
    src: &LabeledDataset,
    dst: &LabeledDataset,
    threat: &ThreatModel,
) -> Result<TransportPlan> {
    exact_ot_raw(
        &src.features(),
        &src.labels(),
        &dst.features(),
        &dst.labels(),
        threat,
    )
}

pub(crate) fn exact_ot_raw(
    src: &[Vec<f64>],
    src_labels: &[usize],
    dst: &[Vec<f64>],
    dst_labels: &[usize],
    threat: &ThreatModel,
) -> Result<TransportPlan> {
    if src.len() != dst.len() {
        return Err(Error::Dimension {
            expected: src.len(),
            found: dst.len(),
        });
    }
    let max_label = src_labels
        .iter()
        .chain(dst_labels)
        .copied()
        .max()
        .unwrap_or(0);
    let mut perm = vec![usize::MAX; src.len()];
    for label in 1..=max_label {
        let rows: Vec<usize> = (0..src.len()).filter(|&i| src_labels[i] == label).collect();
        let cols: Vec<usize> = (0..dst.len()).filter(|&j| dst_labels[j] == label).collect();
        if rows.len() != cols.len() {
            return Err(Error::Infeasible(format!(
                "label {label} has {} source and {} target samples",
                rows.len(),
                cols.len()
            )));
        }
        if rows.is_empty() {
            continue;
        }
        if rows.len() > EXACT_OT_CAP {
            return Err(Error::InvalidConfig(format!(
                "exact transport limited to {EXACT_OT_CAP} samples per label, label {label} has {}",
                rows.len()
            )));
        }
        let dist: Vec<Vec<f64>> = rows
            .iter()
            .map(|&i| {
                cols.iter()
                    .map(|&j| raw_distance(&src[i], &dst[j], threat.r()))
                    .collect()
            })
            .collect();
        let local = match threat.p() {
            NormIndex::Inf => bottleneck_assignment(&dist),
            p => {
                let e = p.exponent().expect("finite");
                let cost: Vec<Vec<f64>> = dist
                    .iter()
                    .map(|row| row.iter().map(|d| d.powf(e)).collect())
                    .collect();
                hungarian(&cost)
            }
        };
        for (a, &b) in local.iter().enumerate() {
            perm[rows[a]] = cols[b];
        }
    }
    Ok(TransportPlan::from_perm(
        perm,
        src,
        src_labels,
        dst,
        dst_labels,
        threat.p(),
        threat.r(),
    ))
}

/// Min-sum assignment on a square cost matrix (shortest augmenting paths with
/// potentials, O(n^3)). Returns `assign[row] = col`.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // 1-based arrays; index 0 is the virtual column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        assign[row_of[j] - 1] = j - 1;
    }
    assign
}

/// Min-max assignment: smallest threshold admitting a perfect matching,
/// found by binary search over the sorted distinct costs.
pub fn bottleneck_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let mut levels: Vec<f64> = cost.iter().flatten().copied().collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let (mut lo, mut hi) = (0usize, levels.len() - 1);
    let mut best =
        perfect_matching(cost, levels[hi]).expect("complete graph has a perfect matching");
    while lo < hi {
        let mid = (lo + hi) / 2;
        match perfect_matching(cost, levels[mid]) {
            Some(m) => {
                best = m;
                hi = mid;
            }
            None => lo = mid + 1,
        }
    }
    if best.len() != n {
        unreachable!("matching covers every row");
    }
    best
}

/// Kuhn's augmenting-path matching restricted to edges with cost <= threshold.
fn perfect_matching(cost: &[Vec<f64>], threshold: f64) -> Option<Vec<usize>> {
    let n = cost.len();
    let mut col_owner: Vec<Option<usize>> = vec![None; n];

    fn augment(
        row: usize,
        cost: &[Vec<f64>],
        t: f64,
        seen: &mut [bool],
        owner: &mut [Option<usize>],
    ) -> bool {
        for col in 0..cost.len() {
            if cost[row][col] <= t && !seen[col] {
                seen[col] = true;
                if owner[col].is_none_or(|r| augment(r, cost, t, seen, owner)) {
                    owner[col] = Some(row);
                    return true;
                }
            }
        }
        false
    }

    for row in 0..n {
        let mut seen = vec![false; n];
        if !augment(row, cost, threshold, &mut seen, &mut col_owner) {
            return None;
        }
    }
    let mut assign = vec![0usize; n];
    for (col, owner) in col_owner.iter().enumerate() {
        assign[owner.expect("perfect")] = col;
    }
    Some(assign)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coupling {
    /// Each sample is matched with its own perturbation.
    #[default]
    Identity,
    /// Optimal matching from [`exact_ot`].
    Exact,
}

impl std::str::FromStr for Coupling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Self::Identity),
            "exact" => Ok(Self::Exact),
            other => Err(Error::InvalidConfig(format!("unknown coupling `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMode {
    /// No-op inside the ball, shrink onto it from outside.
    #[default]
    Ball,
    /// Always rescale displacements to distance exactly `δ`.
    Sphere,
}

/// Pre-clamp output of a projection, aligned with the original samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub features: Vec<Vec<f64>>,
    /// Distance under the chosen coupling before projecting.
    pub distance_before: f64,
    /// Distance of `features` from the original samples, same coupling.
    pub distance_after: f64,
}

/// Projects perturbed features back into `B_δ(orig)` along the coupling.
///
/// For finite `p` every displacement is scaled by `δ / d` when `d > δ`. For
/// `p = ∞` the ball is a per-sample constraint, so each displacement is
/// projected onto the `l_r` ball of radius `δ` (coordinate clipping for
/// `r = ∞`). Features are not clamped here.
pub fn project_features(
    orig: &LabeledDataset,
    perturbed: &[Vec<f64>],
    threat: &ThreatModel,
    coupling: Coupling,
    mode: ProjectionMode,
) -> Result<Projection> {
    if perturbed.len() != orig.len() {
        return Err(Error::Dimension {
            expected: orig.len(),
            found: perturbed.len(),
        });
    }
    let labels = orig.labels();
    let orig_x = orig.features();
    let targets: Vec<&Vec<f64>> = match coupling {
        Coupling::Identity => perturbed.iter().collect(),
        Coupling::Exact => {
            let plan = exact_ot_raw(&orig_x, &labels, perturbed, &labels, threat)?;
            plan.perm.iter().map(|&j| &perturbed[j]).collect()
        }
    };
    let distances: Vec<f64> = orig_x
        .iter()
        .zip(&targets)
        .map(|(x, t)| raw_distance(x, t, threat.r()))
        .collect();
    let before = aggregate(&distances, threat.p());
    let delta = threat.delta();

    let features: Vec<Vec<f64>> = match (mode, threat.p()) {
        (ProjectionMode::Ball, NormIndex::Inf) => orig_x
            .iter()
            .zip(&targets)
            .zip(&distances)
            .map(|((x, t), &d)| match threat.r() {
                NormIndex::Inf => x
                    .iter()
                    .zip(t.iter())
                    .map(|(&xi, &ti)| ti.max(xi - delta).min(xi + delta))
                    .collect(),
                _ if d > delta => rescale(x, t, delta / d),
                _ => (*t).clone(),
            })
            .collect(),
        (ProjectionMode::Ball, _) if before <= delta => targets.into_iter().cloned().collect(),
        _ if before == 0.0 => targets.into_iter().cloned().collect(),
        _ => {
            let scale = delta / before;
            orig_x
                .iter()
                .zip(&targets)
                .map(|(x, t)| rescale(x, t, scale))
                .collect()
        }
    };
    let after = aggregate(
        &orig_x
            .iter()
            .zip(&features)
            .map(|(x, f)| raw_distance(x, f, threat.r()))
            .collect::<Vec<_>>(),
        threat.p(),
    );
    Ok(Projection {
        features,
        distance_before: before,
        distance_after: after,
    })
}

fn rescale(x: &[f64], t: &[f64], scale: f64) -> Vec<f64> {
    x.iter()
        .zip(t)
        .map(|(xi, ti)| xi + scale * (ti - xi))
        .collect()
}

/// [`project_features`] followed by clamping into the unit box.
pub fn project_ball(
    orig: &LabeledDataset,
    perturbed: &[Vec<f64>],
    threat: &ThreatModel,
    coupling: Coupling,
    mode: ProjectionMode,
) -> Result<LabeledDataset> {
    let proj = project_features(orig, perturbed, threat, coupling, mode)?;
    orig.with_features(proj.features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ds(points: &[(f64, usize)]) -> LabeledDataset {
        let samples = points
            .iter()
            .map(|&(x, y)| Sample { x: vec![x], y })
            .collect();
        LabeledDataset::new(1, 2, samples).unwrap()
    }

    fn tm(p: NormIndex, r: NormIndex, delta: f64) -> ThreatModel {
        ThreatModel::new(p, r, delta).unwrap()
    }

    #[test]
    fn conjugates() {
        assert_eq!(NormIndex::Two.conjugate(), NormIndex::Two);
        assert_eq!(NormIndex::Inf.conjugate(), NormIndex::One);
        let t = tm(NormIndex::Inf, NormIndex::Two, 0.1);
        assert_eq!((t.q(), t.s()), (NormIndex::One, NormIndex::Two));
        assert!(ThreatModel::new(NormIndex::One, NormIndex::Two, 0.1).is_err());
        assert!(ThreatModel::new(NormIndex::Two, NormIndex::Two, -0.1).is_err());
    }

    #[test]
    fn pseudo_distance_cases() {
        let a = Sample {
            x: vec![0.0, 0.0],
            y: 1,
        };
        let b = Sample {
            x: vec![0.3, 0.4],
            y: 1,
        };
        let c = Sample {
            x: vec![0.0, 0.0],
            y: 2,
        };
        assert_eq!(pseudo_distance(&a, &a, NormIndex::Two), 0.0);
        assert_eq!(pseudo_distance(&a, &c, NormIndex::Two), f64::INFINITY);
        assert!((pseudo_distance(&a, &b, NormIndex::Two) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn h_map_cases() {
        assert_eq!(
            h_map(&[2.0, -3.0, 0.0], NormIndex::One),
            vec![1.0, -1.0, 0.0]
        );
        let h = h_map(&[3.0, 4.0], NormIndex::Two);
        assert!((h[0] - 0.6).abs() < 1e-15 && (h[1] - 0.8).abs() < 1e-15);
        assert_eq!(h_map(&[0.0, 0.0], NormIndex::One), vec![0.0, 0.0]);
        assert_eq!(h_map(&[0.0, 0.0], NormIndex::Two), vec![0.0, 0.0]);
    }

    #[test]
    fn wasserstein_cases() {
        let p = ds(&[(0.1, 1), (0.6, 2)]);
        let t2 = tm(NormIndex::Two, NormIndex::Two, 0.0);
        assert_eq!(empirical_wasserstein(&p, &p, &t2, None).unwrap(), 0.0);

        let a = LabeledDataset::new(
            2,
            2,
            vec![Sample {
                x: vec![0.0, 0.0],
                y: 1,
            }],
        )
        .unwrap();
        let b = LabeledDataset::new(
            2,
            2,
            vec![Sample {
                x: vec![0.3, 0.4],
                y: 1,
            }],
        )
        .unwrap();
        assert!((empirical_wasserstein(&a, &b, &t2, None).unwrap() - 0.5).abs() < 1e-15);

        let tinf = tm(NormIndex::Inf, NormIndex::Two, 0.0);
        let q = ds(&[(0.2, 1), (0.3, 2)]);
        let w = empirical_wasserstein(&ds(&[(0.1, 1), (0.6, 2)]), &q, &tinf, None).unwrap();
        assert!((w - 0.3).abs() < 1e-15);

        let mismatched = ds(&[(0.1, 2), (0.6, 1)]);
        assert_eq!(
            empirical_wasserstein(&p, &mismatched, &t2, None).unwrap(),
            f64::INFINITY
        );
        assert!(empirical_wasserstein(&p, &ds(&[(0.1, 1)]), &t2, None).is_err());
    }

    #[test]
    fn exact_ot_swaps_and_respects_labels() {
        let t2 = tm(NormIndex::Two, NormIndex::Two, 0.0);
        let p = ds(&[(0.0, 1), (1.0, 1)]);
        let q = ds(&[(1.0, 1), (0.0, 1)]);
        let plan = exact_ot(&p, &q, &t2).unwrap();
        assert_eq!(plan.perm, vec![1, 0]);
        assert_eq!(plan.cost, 0.0);

        let p = ds(&[(0.0, 1), (0.9, 2), (0.5, 1)]);
        let q = ds(&[(0.0, 2), (0.9, 1), (0.4, 1)]);
        let plan = exact_ot(&p, &q, &t2).unwrap();
        for (i, &j) in plan.perm.iter().enumerate() {
            assert_eq!(p.samples()[i].y, q.samples()[j].y);
        }
        assert!(plan.cost.is_finite());

        let unbalanced = ds(&[(0.0, 2), (0.9, 2), (0.4, 1)]);
        assert!(matches!(
            exact_ot(&p, &unbalanced, &t2),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn projection_examples() {
        let t = tm(NormIndex::Two, NormIndex::Two, 0.2);
        let orig = ds(&[(0.5, 1)]);
        let out = project_ball(
            &orig,
            &[vec![0.9]],
            &t,
            Coupling::Identity,
            ProjectionMode::Ball,
        )
        .unwrap();
        assert!((out.samples()[0].x[0] - 0.7).abs() < 1e-15);

        let inside = project_ball(
            &orig,
            &[vec![0.6]],
            &t,
            Coupling::Identity,
            ProjectionMode::Ball,
        )
        .unwrap();
        assert_eq!(inside.samples()[0].x, vec![0.6]);

        let t = tm(NormIndex::Two, NormIndex::Two, 0.6);
        let clamped = project_ball(
            &ds(&[(0.5, 1)]),
            &[vec![1.7]],
            &t,
            Coupling::Identity,
            ProjectionMode::Ball,
        )
        .unwrap();
        assert_eq!(clamped.samples()[0].x, vec![1.0]);
    }

    #[test]
    fn sphere_mode_expands_interior_points() {
        let t = tm(NormIndex::Two, NormIndex::Two, 0.2);
        let orig = ds(&[(0.5, 1)]);
        let proj = project_features(
            &orig,
            &[vec![0.6]],
            &t,
            Coupling::Identity,
            ProjectionMode::Sphere,
        )
        .unwrap();
        assert!((proj.features[0][0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn inf_projection_is_per_sample() {
        let t = tm(NormIndex::Inf, NormIndex::Inf, 0.1);
        let orig = LabeledDataset::new(
            2,
            2,
            vec![
                Sample {
                    x: vec![0.5, 0.5],
                    y: 1,
                },
                Sample {
                    x: vec![0.2, 0.2],
                    y: 2,
                },
            ],
        )
        .unwrap();
        let pert = vec![vec![0.9, 0.45], vec![0.25, 0.2]];
        let proj =
            project_features(&orig, &pert, &t, Coupling::Identity, ProjectionMode::Ball).unwrap();
        assert_eq!(proj.features[0], vec![0.5 + 0.1, 0.45]);
        assert_eq!(proj.features[1], vec![0.25, 0.2]);
    }

    fn brute_force(dist: &[Vec<f64>], p: NormIndex) -> f64 {
        let n = dist.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best = f64::INFINITY;
        permute(&mut perm, 0, &mut |pm| {
            let d: Vec<f64> = pm.iter().enumerate().map(|(i, &j)| dist[i][j]).collect();
            best = best.min(aggregate(&d, p));
        });
        best
    }

    fn permute(perm: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == perm.len() {
            f(perm);
            return;
        }
        for i in k..perm.len() {
            perm.swap(k, i);
            permute(perm, k + 1, f);
            perm.swap(k, i);
        }
    }

    #[test]
    fn three_point_instance_matches_enumeration() {
        let src = vec![vec![0.1, 0.9], vec![0.4, 0.3], vec![0.8, 0.5]];
        let dst = vec![vec![0.7, 0.6], vec![0.2, 0.8], vec![0.5, 0.1]];
        let labels = vec![1, 1, 1];
        for p in [NormIndex::Two, NormIndex::Inf] {
            let t = tm(p, NormIndex::Two, 0.0);
            let plan = exact_ot_raw(&src, &labels, &dst, &labels, &t).unwrap();
            let dist: Vec<Vec<f64>> = src
                .iter()
                .map(|a| {
                    dst.iter()
                        .map(|b| raw_distance(a, b, NormIndex::Two))
                        .collect()
                })
                .collect();
            assert_eq!(plan.cost, brute_force(&dist, p));
        }
    }

    proptest! {
        #[test]
        fn h_map_aligns_with_dual_norm(v in prop::collection::vec(-5.0f64..5.0, 1..8)) {
            for (s, r) in [(NormIndex::One, NormIndex::Inf), (NormIndex::Two, NormIndex::Two)] {
                let h = h_map(&v, s);
                let inner: f64 = h.iter().zip(&v).map(|(a, b)| a * b).sum();
                prop_assert!((inner - dual_norm(&v, s)).abs() <= 1e-12 * (1.0 + dual_norm(&v, s)));
                prop_assert!(norm(&h, r) <= 1.0 + 1e-12);
            }
        }

        #[test]
        fn exact_never_worse_than_identity(
            pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 1usize..=2), 1..7),
            shift in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 7),
        ) {
            let src: Vec<Sample> = pts.iter().map(|&(a, b, y)| Sample { x: vec![a, b], y }).collect();
            let dst: Vec<Sample> = pts.iter().zip(&shift).map(|(&(_, _, y), &(a, b))| Sample { x: vec![a, b], y }).collect();
            let p = LabeledDataset::new(2, 2, src).unwrap();
            let q = LabeledDataset::new(2, 2, dst).unwrap();
            for pi in [NormIndex::Two, NormIndex::Inf] {
                let t = tm(pi, NormIndex::Two, 0.0);
                let plan = exact_ot(&p, &q, &t).unwrap();
                let ident = empirical_wasserstein(&p, &q, &t, None).unwrap();
                prop_assert!(plan.cost <= ident + 1e-15);
                let again = empirical_wasserstein(&p, &q, &t, Some(&plan.perm)).unwrap();
                prop_assert_eq!(again, plan.cost);
                // symmetry with the inverse plan
                let mut inv = vec![0; plan.perm.len()];
                for (i, &j) in plan.perm.iter().enumerate() { inv[j] = i; }
                let back = empirical_wasserstein(&q, &p, &t, Some(&inv)).unwrap();
                prop_assert!((back - plan.cost).abs() <= 1e-15);
            }
        }

        #[test]
        fn projection_lands_on_min_of_distance_and_budget(
            pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..6),
            moves in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 6),
            delta in 0.001f64..0.5,
        ) {
            let orig = LabeledDataset::new(2, 2, pts.iter().map(|&(a, b)| Sample { x: vec![a, b], y: 1 }).collect()).unwrap();
            let pert: Vec<Vec<f64>> = pts.iter().zip(&moves).map(|(&(a, b), &(u, v))| vec![a + u, b + v]).collect();
            for (p, r) in [(NormIndex::Two, NormIndex::Two), (NormIndex::Two, NormIndex::Inf), (NormIndex::Inf, NormIndex::Two), (NormIndex::Inf, NormIndex::Inf)] {
                let t = tm(p, r, delta);
                let proj = project_features(&orig, &pert, &t, Coupling::Identity, ProjectionMode::Ball).unwrap();
                prop_assert!(proj.distance_after <= delta + 1e-9);
                prop_assert!((proj.distance_after - proj.distance_before.min(delta)).abs() <= 1e-9);
            }
        }
    }
}

//! Evaluation metrics for sets of segmentation masks: IoU with both
//! empty-prediction policies, squared generalized energy distance,
//! Hungarian-matched and average IoU, and GED-versus-sample-size curves.

mod assignment;

pub use assignment::hungarian_solve;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mask::Mask;

/// How to score a pair whose union is empty (both masks blank): the IoU is
/// undefined, and a correct empty prediction can either be awarded full
/// score or excluded from the mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmptyPolicy {
    IncludeAsOne,
    Exclude,
}

impl std::str::FromStr for EmptyPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "include" | "include_as_one" => Ok(EmptyPolicy::IncludeAsOne),
            "exclude" => Ok(EmptyPolicy::Exclude),
            other => Err(Error::InvalidConfig(format!(
                "empty_policy must be `include` or `exclude`, got `{other}`"
            ))),
        }
    }
}

/// Intersection over union of two binary masks. `None` means undefined
/// (empty union under [`EmptyPolicy::Exclude`]).
pub fn iou(a: &Mask, b: &Mask, policy: EmptyPolicy) -> Result<Option<f64>> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch {
            op: "iou",
            detail: format!("{}x{} vs {}x{}", a.height, a.width, b.height, b.width),
        });
    }
    let mut intersection = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.data.iter().zip(&b.data) {
        intersection += (x & y) as usize;
        union += (x | y) as usize;
    }
    if union == 0 {
        return Ok(match policy {
            EmptyPolicy::IncludeAsOne => Some(1.0),
            EmptyPolicy::Exclude => None,
        });
    }
    Ok(Some(intersection as f64 / union as f64))
}

fn validate_set(name: &'static str, masks: &[Mask]) -> Result<()> {
    let Some(first) = masks.first() else {
        return Err(Error::InvalidParameter(format!("{name} mask set is empty")));
    };
    if masks.iter().any(|m| !m.same_shape(first)) {
        return Err(Error::ShapeMismatch {
            op: "mask_set",
            detail: format!("{name} masks have differing shapes"),
        });
    }
    Ok(())
}

// Mean of d = 1 - IoU over the full ordered cross product (equal indices
// included). Undefined pairs are dropped; `None` when every pair is
// undefined.
fn mean_distance(xs: &[Mask], ys: &[Mask], policy: EmptyPolicy) -> Result<Option<f64>> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for x in xs {
        for y in ys {
            if let Some(v) = iou(x, y, policy)? {
                sum += 1.0 - v;
                count += 1;
            }
        }
    }
    Ok((count > 0).then(|| sum / count as f64))
}

/// Squared generalized energy distance between the ground-truth set `s` and
/// the prediction set `y`:
/// `2 E[d(S,Y)] - E[d(S,S')] - E[d(Y,Y')]` with `d = 1 - IoU`.
///
/// Expectations are means over the full ordered cross product including
/// equal-index pairs, so `ged_squared(s, s) = 0` exactly. Finite-sample
/// values may be negative.
pub fn ged_squared(s: &[Mask], y: &[Mask], policy: EmptyPolicy) -> Result<f64> {
    validate_set("ground-truth", s)?;
    validate_set("prediction", y)?;
    if !s[0].same_shape(&y[0]) {
        return Err(Error::ShapeMismatch {
            op: "ged_squared",
            detail: "ground-truth and prediction shapes differ".into(),
        });
    }
    let cross = mean_distance(s, y, policy)?
        .ok_or_else(|| Error::UndefinedMetric("all S-Y pairs undefined under exclude".into()))?;
    let within_s = mean_distance(s, s, policy)?
        .ok_or_else(|| Error::UndefinedMetric("all S-S' pairs undefined under exclude".into()))?;
    let within_y = mean_distance(y, y, policy)?
        .ok_or_else(|| Error::UndefinedMetric("all Y-Y' pairs undefined under exclude".into()))?;
    Ok(2.0 * cross - within_s - within_y)
}

/// Mean IoU over a minimum-cost perfect matching between the duplicated
/// ground-truth set and the prediction set.
///
/// `|y|` must be an integer multiple of `|s|`; the ground-truth set is
/// duplicated to the sample size. Costs use `1 - IoU` under
/// [`EmptyPolicy::IncludeAsOne`] so correct empty predictions are rewarded.
pub fn hungarian_matched_iou(s: &[Mask], y: &[Mask]) -> Result<f64> {
    validate_set("ground-truth", s)?;
    validate_set("prediction", y)?;
    if y.len() % s.len() != 0 {
        return Err(Error::InvalidParameter(format!(
            "prediction count {} is not a multiple of annotator count {}; \
             resample so the ground-truth set duplicates evenly",
            y.len(),
            s.len()
        )));
    }
    let n = y.len();
    let dup = n / s.len();
    let mut cost = vec![0.0; n * n];
    for (i, row) in (0..n).map(|i| (i, &s[i / dup])) {
        for (j, pred) in y.iter().enumerate() {
            let v = iou(row, pred, EmptyPolicy::IncludeAsOne)?.expect("include policy is total");
            cost[i * n + j] = 1.0 - v;
        }
    }
    let assignment = hungarian_solve(&cost, n, n)?;
    let total: f64 = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| 1.0 - cost[i * n + j])
        .sum();
    Ok(total / n as f64)
}

/// Mean IoU of every prediction against the single annotation.
pub fn average_iou(s: &[Mask], y: &[Mask], policy: EmptyPolicy) -> Result<f64> {
    validate_set("ground-truth", s)?;
    validate_set("prediction", y)?;
    if s.len() != 1 {
        return Err(Error::InvalidParameter(format!(
            "average IoU needs exactly one annotation, got {}; use hungarian_matched_iou",
            s.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for pred in y {
        if let Some(v) = iou(&s[0], pred, policy)? {
            sum += v;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::UndefinedMetric(
            "all prediction pairs undefined under exclude".into(),
        ));
    }
    Ok(sum / count as f64)
}

/// One point of a GED-versus-sample-size curve.
#[derive(Clone, Debug)]
pub struct GedCurvePoint {
    pub size: usize,
    pub mean: f64,
    pub std: f64,
}

/// For each sample size, draw `repeats` independent prediction sets from
/// `sampler` and report the mean and population standard deviation of the
/// squared GED against `s`.
pub fn ged_curve<F>(
    s: &[Mask],
    mut sampler: F,
    sizes: &[usize],
    repeats: usize,
    rng: &mut ChaCha8Rng,
    policy: EmptyPolicy,
) -> Result<Vec<GedCurvePoint>>
where
    F: FnMut(&mut ChaCha8Rng) -> Mask,
{
    if repeats == 0 {
        return Err(Error::InvalidParameter("repeats must be positive".into()));
    }
    if sizes.iter().any(|&n| n < 2) {
        return Err(Error::InvalidParameter(
            "every sample size must be at least 2".into(),
        ));
    }
    let mut out = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let mut values = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let samples: Vec<Mask> = (0..size).map(|_| sampler(rng)).collect();
            values.push(ged_squared(s, &samples, policy)?);
        }
        let mean = values.iter().sum::<f64>() / repeats as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / repeats as f64;
        out.push(GedCurvePoint {
            size,
            mean,
            std: var.sqrt(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    fn mask(h: usize, w: usize, data: &[u8]) -> Mask {
        Mask::new(h, w, data.to_vec()).unwrap()
    }

    fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Mask {
        Mask::new(h, w, (0..h * w).map(|_| rng.gen_range(0..2u8)).collect()).unwrap()
    }

    // Independent pixel-count IoU for the pair-enumeration oracle.
    fn oracle_iou(a: &Mask, b: &Mask, policy: EmptyPolicy) -> Option<f64> {
        let mut inter = 0.0;
        let mut union = 0.0;
        for r in 0..a.height {
            for c in 0..a.width {
                let (x, y) = (a.get(r, c), b.get(r, c));
                if x == 1 && y == 1 {
                    inter += 1.0;
                }
                if x == 1 || y == 1 {
                    union += 1.0;
                }
            }
        }
        if union == 0.0 {
            match policy {
                EmptyPolicy::IncludeAsOne => Some(1.0),
                EmptyPolicy::Exclude => None,
            }
        } else {
            Some(inter / union)
        }
    }

    // Independently coded brute-force GED over explicit pair lists.
    pub(crate) fn oracle_ged(s: &[Mask], y: &[Mask], policy: EmptyPolicy) -> Option<f64> {
        let term = |xs: &[Mask], ys: &[Mask]| -> Option<f64> {
            let mut vals = Vec::new();
            for a in xs {
                for b in ys {
                    if let Some(v) = oracle_iou(a, b, policy) {
                        vals.push(1.0 - v);
                    }
                }
            }
            if vals.is_empty() {
                None
            } else {
                Some(vals.iter().sum::<f64>() / vals.len() as f64)
            }
        };
        Some(2.0 * term(s, y)? - term(s, s)? - term(y, y)?)
    }

    #[test]
    fn iou_identity_and_disjoint() {
        let a = mask(2, 2, &[1, 1, 0, 0]);
        let b = mask(2, 2, &[0, 0, 1, 1]);
        assert_eq!(iou(&a, &a, EmptyPolicy::Exclude).unwrap(), Some(1.0));
        assert_eq!(iou(&a, &b, EmptyPolicy::Exclude).unwrap(), Some(0.0));
    }

    #[test]
    fn iou_one_third() {
        // |intersection| = 1, |union| = 3
        let a = mask(2, 2, &[1, 1, 0, 0]);
        let b = mask(2, 2, &[1, 0, 1, 0]);
        let v = iou(&a, &b, EmptyPolicy::Exclude).unwrap().unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(v, oracle_iou(&a, &b, EmptyPolicy::Exclude).unwrap());
    }

    #[test]
    fn iou_empty_union_policies() {
        let e = Mask::empty(3, 3);
        assert_eq!(iou(&e, &e, EmptyPolicy::IncludeAsOne).unwrap(), Some(1.0));
        assert_eq!(iou(&e, &e, EmptyPolicy::Exclude).unwrap(), None);
    }

    #[test]
    fn iou_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let a = random_mask(&mut rng, 3, 3);
            let b = random_mask(&mut rng, 3, 3);
            assert_eq!(
                iou(&a, &b, EmptyPolicy::IncludeAsOne).unwrap(),
                iou(&b, &a, EmptyPolicy::IncludeAsOne).unwrap()
            );
        }
    }

    #[test]
    fn ged_identical_sets_is_zero() {
        let a = mask(2, 2, &[1, 0, 0, 1]);
        let s = vec![a.clone(), a.clone()];
        assert_eq!(ged_squared(&s, &s, EmptyPolicy::IncludeAsOne).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let set: Vec<Mask> = (0..3).map(|_| random_mask(&mut rng, 3, 3)).collect();
            assert_eq!(ged_squared(&set, &set, EmptyPolicy::IncludeAsOne).unwrap(), 0.0);
            assert_eq!(ged_squared(&set, &set, EmptyPolicy::Exclude).unwrap(), 0.0);
        }
    }

    #[test]
    fn ged_full_empty_hand_case() {
        let full = mask(2, 2, &[1, 1, 1, 1]);
        let empty = Mask::empty(2, 2);
        let s = vec![full.clone(), empty];
        let y = vec![full];
        let v = ged_squared(&s, &y, EmptyPolicy::IncludeAsOne).unwrap();
        assert!((v - 0.5).abs() < 1e-15, "{v}");
    }

    #[test]
    fn ged_matches_oracle_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..100 {
            let s: Vec<Mask> = (0..4).map(|_| random_mask(&mut rng, 3, 3)).collect();
            let y: Vec<Mask> = (0..16).map(|_| random_mask(&mut rng, 3, 3)).collect();
            for policy in [EmptyPolicy::IncludeAsOne, EmptyPolicy::Exclude] {
                let got = ged_squared(&s, &y, policy).unwrap();
                let want = oracle_ged(&s, &y, policy).unwrap();
                assert_eq!(got, want, "trial {trial}");
            }
        }
    }

    #[test]
    fn ged_all_undefined_is_error() {
        let e = Mask::empty(2, 2);
        let s = vec![e.clone()];
        let y = vec![e];
        assert!(matches!(
            ged_squared(&s, &y, EmptyPolicy::Exclude),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn matched_iou_perfect_prediction() {
        let a = mask(2, 2, &[1, 0, 0, 0]);
        let b = mask(2, 2, &[0, 0, 0, 1]);
        let s = vec![a.clone(), b.clone()];
        let y = vec![b, a];
        assert!((hungarian_matched_iou(&s, &y).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn matching_strictly_beats_unmatched_average() {
        // S = {A, B} disjoint, Y = {A, B}: matched 1.0, unmatched mean 0.5.
        let a = mask(2, 2, &[1, 1, 0, 0]);
        let b = mask(2, 2, &[0, 0, 1, 1]);
        let s = vec![a.clone(), b.clone()];
        let y = vec![a.clone(), b.clone()];
        let matched = hungarian_matched_iou(&s, &y).unwrap();
        assert!((matched - 1.0).abs() < 1e-15);
        let mut unmatched = 0.0;
        for gt in &s {
            for pred in &y {
                unmatched += iou(gt, pred, EmptyPolicy::IncludeAsOne).unwrap().unwrap();
            }
        }
        unmatched /= 4.0;
        assert!((unmatched - 0.5).abs() < 1e-15);
        assert!(matched > unmatched);
    }

    #[test]
    fn matched_iou_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..40 {
            let s: Vec<Mask> = (0..2).map(|_| random_mask(&mut rng, 3, 3)).collect();
            let y: Vec<Mask> = (0..6).map(|_| random_mask(&mut rng, 3, 3)).collect();
            let got = hungarian_matched_iou(&s, &y).unwrap();

            // brute force over all 720 permutations
            let n = 6;
            let dup: Vec<&Mask> = (0..n).map(|i| &s[i / 3]).collect();
            let mut best = f64::NEG_INFINITY;
            let mut perm: Vec<usize> = (0..n).collect();
            loop {
                let total: f64 = perm
                    .iter()
                    .enumerate()
                    .map(|(i, &j)| {
                        iou(dup[i], &y[j], EmptyPolicy::IncludeAsOne)
                            .unwrap()
                            .unwrap()
                    })
                    .sum();
                best = best.max(total / n as f64);
                // next permutation
                let mut i = n - 1;
                while i > 0 && perm[i - 1] >= perm[i] {
                    i -= 1;
                }
                if i == 0 {
                    break;
                }
                let mut j = n - 1;
                while perm[j] <= perm[i - 1] {
                    j -= 1;
                }
                perm.swap(i - 1, j);
                perm[i..].reverse();
            }
            assert!((got - best).abs() < 1e-9, "{got} vs {best}");
        }
    }

    #[test]
    fn matched_iou_rejects_non_multiple() {
        let a = mask(1, 1, &[1]);
        let s = vec![a.clone(), a.clone()];
        let y = vec![a.clone(), a.clone(), a];
        let err = hungarian_matched_iou(&s, &y).unwrap_err().to_string();
        assert!(err.contains("resample"), "{err}");
    }

    #[test]
    fn average_iou_cases() {
        let a = mask(2, 2, &[1, 1, 0, 0]);
        let d = mask(2, 2, &[0, 0, 1, 1]);
        let e = Mask::empty(2, 2);
        let s = vec![a.clone()];
        assert_eq!(average_iou(&s, &[a.clone(), a.clone()], EmptyPolicy::IncludeAsOne).unwrap(), 1.0);
        assert_eq!(average_iou(&s, &[a.clone(), d], EmptyPolicy::IncludeAsOne).unwrap(), 0.5);
        let s_empty = vec![e.clone()];
        assert_eq!(
            average_iou(&s_empty, &[e.clone(), e.clone()], EmptyPolicy::IncludeAsOne).unwrap(),
            1.0
        );
        assert!(average_iou(&s_empty, &[e], EmptyPolicy::Exclude).is_err());
        let two = vec![a.clone(), a.clone()];
        assert!(average_iou(&two, &[a], EmptyPolicy::IncludeAsOne).is_err());
    }

    #[test]
    fn ged_curve_degenerate_sampler_is_zero() {
        let gt = mask(2, 2, &[1, 1, 0, 0]);
        let s = vec![gt.clone()];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let points = ged_curve(
            &s,
            |_| gt.clone(),
            &[2, 4, 8],
            10,
            &mut rng,
            EmptyPolicy::IncludeAsOne,
        )
        .unwrap();
        for p in points {
            assert_eq!(p.mean, 0.0);
            assert_eq!(p.std, 0.0);
        }
    }

    #[test]
    fn ged_curve_consistent_with_direct_calls() {
        let gt = vec![mask(2, 2, &[1, 0, 0, 0]), mask(2, 2, &[1, 1, 0, 0])];
        let sampler = |rng: &mut ChaCha8Rng| -> Mask {
            if rng.gen_bool(0.5) {
                mask(2, 2, &[1, 0, 0, 0])
            } else {
                Mask::empty(2, 2)
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut replay = rng.clone();
        let points =
            ged_curve(&gt, sampler, &[2, 3], 4, &mut rng, EmptyPolicy::IncludeAsOne).unwrap();
        // replay the exact same draws
        for point in &points {
            let mut values = Vec::new();
            for _ in 0..4 {
                let samples: Vec<Mask> = (0..point.size).map(|_| sampler(&mut replay)).collect();
                values.push(ged_squared(&gt, &samples, EmptyPolicy::IncludeAsOne).unwrap());
            }
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            assert_eq!(point.mean, mean);
        }
    }

    #[test]
    fn sizes_below_two_rejected() {
        let gt = vec![mask(1, 1, &[1])];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(ged_curve(
            &gt,
            |_| mask(1, 1, &[1]),
            &[1, 2],
            3,
            &mut rng,
            EmptyPolicy::IncludeAsOne
        )
        .is_err());
    }
}

//! Segmentation metrics: dice, object-level dice, Hausdorff distance and
//! reports.
//!
//! Object dice follows the Gland Segmentation (Glas) challenge definition:
//!
//! ```text
//! D_obj = 1/2 * ( sum_i |G_i|/|G| * D(G_i, S*(G_i)) + sum_j |S_j|/|S| * D(G*(S_j), S_j) )
//! ```
//!
//! where `S*(G_i)` is the predicted instance with maximal overlap with `G_i`
//! (dice 0 when nothing overlaps) and vice versa.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{connected_components, distance_transform, Connectivity};
use crate::pnm::write_bytes;
use crate::raster::{ClassMask, InstanceMask};

fn check_dims(g: &InstanceMask, p: &InstanceMask) -> Result<()> {
    if g.dims() != p.dims() {
        return Err(Error::DimensionMismatch {
            expected: g.dims(),
            actual: p.dims(),
        });
    }
    Ok(())
}

/// `2|g ∩ p| / (|g| + |p|)`, and 1 when both are empty.
pub fn dice(g: &InstanceMask, p: &InstanceMask) -> Result<f64> {
    check_dims(g, p)?;
    Ok(dice_counts(g.intersection_count(p), g.count(), p.count()))
}

fn dice_counts(inter: usize, a: usize, b: usize) -> f64 {
    if a + b == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (a + b) as f64
    }
}

/// One direction of the object dice: area-weighted dice of every instance in
/// `from` against its maximal-overlap partner in `to`.
fn matched_dice(from: &[InstanceMask], to: &[InstanceMask]) -> f64 {
    let total: usize = from.iter().map(InstanceMask::count).sum();
    if total == 0 {
        return 0.0;
    }
    from.iter()
        .map(|a| {
            let mut best: Option<(usize, usize)> = None;
            for (j, b) in to.iter().enumerate() {
                let overlap = a.intersection_count(b);
                if overlap > 0 && best.is_none_or(|(o, _)| overlap > o) {
                    best = Some((overlap, j));
                }
            }
            let d = best.map_or(0.0, |(o, j)| dice_counts(o, a.count(), to[j].count()));
            a.count() as f64 / total as f64 * d
        })
        .sum()
}

/// Object-level dice between two instance lists. Both empty gives 1, one
/// empty gives 0.
pub fn object_dice(gt: &[InstanceMask], pred: &[InstanceMask]) -> Result<f64> {
    if let Some(first) = gt.first().or(pred.first()) {
        for m in gt.iter().chain(pred) {
            check_dims(first, m)?;
        }
    }
    Ok(match (gt.is_empty(), pred.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => 0.5 * (matched_dice(gt, pred) + matched_dice(pred, gt)),
    })
}

/// Symmetric Hausdorff distance between the boundaries of two nonempty
/// masks, Euclidean metric.
pub fn hausdorff(g: &InstanceMask, p: &InstanceMask) -> Result<f64> {
    check_dims(g, p)?;
    if g.is_empty() || p.is_empty() {
        return Err(Error::EmptyMask);
    }
    let bg = g.boundary();
    let bp = p.boundary();
    let directed = |from: &InstanceMask, to: &InstanceMask| {
        let d = distance_transform(to);
        from.support().map(|i| d.values()[i]).fold(0.0, f64::max)
    };
    Ok(directed(&bg, &bp).max(directed(&bp, &bg)))
}

/// Connected regions of every object class, each as its own instance.
pub fn instances_of(mask: &ClassMask) -> Vec<InstanceMask> {
    let mut out = Vec::new();
    for class in 0..mask.background() {
        let labeling = connected_components(&mask.plane(class), Connectivity::Eight);
        out.extend((1..=labeling.count()).map(|id| labeling.mask(id)));
    }
    out
}

/// Mean over images of the foreground dice between each label and its
/// ground truth.
pub fn mean_foreground_dice(labels: &[&ClassMask], gt: &[&ClassMask]) -> Result<f64> {
    if labels.len() != gt.len() || labels.is_empty() {
        return Err(Error::Dataset(format!(
            "{} labels against {} ground-truth masks",
            labels.len(),
            gt.len()
        )));
    }
    let mut sum = 0.0;
    for (l, g) in labels.iter().zip(gt) {
        sum += dice(&g.foreground(), &l.foreground())?;
    }
    Ok(sum / labels.len() as f64)
}

/// `(k, mean dice)` for every recorded label snapshot.
pub fn approximation_curve(snapshots: &[Vec<ClassMask>], gt: &[&ClassMask]) -> Result<Vec<(usize, f64)>> {
    snapshots
        .iter()
        .enumerate()
        .map(|(k, labels)| {
            let refs: Vec<&ClassMask> = labels.iter().collect();
            Ok((k, mean_foreground_dice(&refs, gt)?))
        })
        .collect()
}

pub fn write_curve_csv(curve: &[(usize, f64)], path: &Path) -> Result<()> {
    let mut out = String::from("k,mean_dice\n");
    for (k, d) in curve {
        let _ = writeln!(out, "{k},{d:.6}");
    }
    write_bytes(path, out.as_bytes())
}

/// Metrics of one predicted mask against its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub image_id: String,
    /// Dice per object class.
    pub class_dice: Vec<f64>,
    pub object_dice: f64,
    /// Between the foreground masks; `None` when either is empty.
    pub hausdorff: Option<f64>,
    pub gt_instances: usize,
    pub pred_instances: usize,
}

impl MetricReport {
    pub fn mean_dice(&self) -> f64 {
        self.class_dice.iter().sum::<f64>() / self.class_dice.len() as f64
    }
}

/// Scores `pred` against `gt`. Ground-truth instances default to the
/// connected regions of `gt` when not given.
pub fn evaluate(
    image_id: &str,
    pred: &ClassMask,
    gt: &ClassMask,
    gt_instances: Option<&[InstanceMask]>,
) -> Result<MetricReport> {
    if pred.dims() != gt.dims() {
        return Err(Error::DimensionMismatch {
            expected: gt.dims(),
            actual: pred.dims(),
        });
    }
    if pred.classes() != gt.classes() {
        return Err(Error::Dataset(format!(
            "prediction has {} classes, ground truth {}",
            pred.classes(),
            gt.classes()
        )));
    }
    let class_dice = (0..gt.background())
        .map(|c| dice(&gt.plane(c), &pred.plane(c)))
        .collect::<Result<Vec<_>>>()?;
    let own;
    let gt_inst = match gt_instances {
        Some(list) => list,
        None => {
            own = instances_of(gt);
            &own
        }
    };
    let pred_inst = instances_of(pred);
    let (fg, fp) = (gt.foreground(), pred.foreground());
    let hausdorff = if fg.is_empty() || fp.is_empty() {
        None
    } else {
        Some(hausdorff(&fg, &fp)?)
    };
    Ok(MetricReport {
        image_id: image_id.to_string(),
        class_dice,
        object_dice: object_dice(gt_inst, &pred_inst)?,
        hausdorff,
        gt_instances: gt_inst.len(),
        pred_instances: pred_inst.len(),
    })
}

/// Averages over all reports; Hausdorff over the images where it is defined.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub images: usize,
    pub class_dice: Vec<f64>,
    pub mean_dice: f64,
    pub object_dice: f64,
    pub hausdorff: Option<f64>,
}

pub fn aggregate(reports: &[MetricReport]) -> Option<Aggregate> {
    let first = reports.first()?;
    let n = reports.len() as f64;
    let class_dice = (0..first.class_dice.len())
        .map(|c| reports.iter().map(|r| r.class_dice[c]).sum::<f64>() / n)
        .collect();
    let hd: Vec<f64> = reports.iter().filter_map(|r| r.hausdorff).collect();
    Some(Aggregate {
        images: reports.len(),
        class_dice,
        mean_dice: reports.iter().map(MetricReport::mean_dice).sum::<f64>() / n,
        object_dice: reports.iter().map(|r| r.object_dice).sum::<f64>() / n,
        hausdorff: (!hd.is_empty()).then(|| hd.iter().sum::<f64>() / hd.len() as f64),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"))
}

/// One row per image plus a final `mean` row.
pub fn reports_csv(reports: &[MetricReport]) -> String {
    let classes = reports.first().map_or(0, |r| r.class_dice.len());
    let mut out = String::from("image");
    for c in 0..classes {
        let _ = write!(out, ",dice_class{c}");
    }
    out.push_str(",mean_dice,object_dice,hausdorff,gt_instances,pred_instances\n");
    for r in reports {
        out.push_str(&r.image_id);
        for d in &r.class_dice {
            let _ = write!(out, ",{d:.6}");
        }
        let _ = writeln!(
            out,
            ",{:.6},{:.6},{},{},{}",
            r.mean_dice(),
            r.object_dice,
            fmt_opt(r.hausdorff),
            r.gt_instances,
            r.pred_instances
        );
    }
    if let Some(a) = aggregate(reports) {
        out.push_str("mean");
        for d in &a.class_dice {
            let _ = write!(out, ",{d:.6}");
        }
        let gt: usize = reports.iter().map(|r| r.gt_instances).sum();
        let pred: usize = reports.iter().map(|r| r.pred_instances).sum();
        let _ = writeln!(
            out,
            ",{:.6},{:.6},{},{gt},{pred}",
            a.mean_dice,
            a.object_dice,
            fmt_opt(a.hausdorff)
        );
    }
    out
}

pub fn summary_text(reports: &[MetricReport]) -> String {
    let Some(a) = aggregate(reports) else {
        return "no images evaluated\n".to_string();
    };
    let mut out = format!("images: {}\n", a.images);
    for (c, d) in a.class_dice.iter().enumerate() {
        let _ = writeln!(out, "dice class {c}: {d:.4}");
    }
    let _ = writeln!(out, "mean dice: {:.4}", a.mean_dice);
    let _ = writeln!(out, "object dice: {:.4}", a.object_dice);
    let _ = writeln!(out, "hausdorff: {}", fmt_opt(a.hausdorff));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rect(h: usize, w: usize, r: std::ops::Range<usize>, c: std::ops::Range<usize>) -> InstanceMask {
        InstanceMask::from_fn(h, w, |y, x| r.contains(&y) && c.contains(&x))
    }

    #[test]
    fn dice_table() {
        let a = rect(20, 20, 0..10, 0..10);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &rect(20, 20, 10..20, 10..20)).unwrap(), 0.0);
        let half = rect(20, 20, 0..5, 0..10);
        assert!((dice(&a, &half).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let e = InstanceMask::empty(3, 3);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        assert!(dice(&e, &InstanceMask::empty(3, 4)).is_err());
    }

    #[test]
    fn object_dice_table() {
        let g = InstanceMask::full(4, 4);
        assert_eq!(object_dice(std::slice::from_ref(&g), std::slice::from_ref(&g)).unwrap(), 1.0);
        let left = rect(4, 4, 0..4, 0..2);
        let right = rect(4, 4, 0..4, 2..4);
        // G vs left: 2*8/24; each half vs G: 2*8/24, weights 1/2
        let v = object_dice(std::slice::from_ref(&g), &[left, right]).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(object_dice(std::slice::from_ref(&g), &[]).unwrap(), 0.0);
        assert_eq!(object_dice(&[], &[]).unwrap(), 1.0);
    }

    #[test]
    fn object_dice_weights_by_area() {
        // big GT matched perfectly, small GT missed
        let big = rect(10, 10, 0..6, 0..5);
        let small = rect(10, 10, 8..10, 8..10);
        let v = object_dice(&[big.clone(), small], &[big]).unwrap();
        assert!((v - 0.5 * (30.0 / 34.0 + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn hausdorff_table() {
        let a = rect(5, 8, 2..3, 1..2);
        let b = rect(5, 8, 2..3, 4..5);
        assert_eq!(hausdorff(&a, &a).unwrap(), 0.0);
        assert_eq!(hausdorff(&a, &b).unwrap(), 3.0);
        assert!(hausdorff(&a, &InstanceMask::empty(5, 8)).is_err());
    }

    fn blob(h: usize, w: usize, bits: Vec<bool>) -> InstanceMask {
        InstanceMask::new(h, w, bits).unwrap()
    }

    fn brute_hausdorff(a: &InstanceMask, b: &InstanceMask) -> f64 {
        let w = a.width();
        let pa: Vec<usize> = a.boundary().support().collect();
        let pb: Vec<usize> = b.boundary().support().collect();
        let d = |i: usize, j: usize| {
            let (dy, dx) = ((i / w) as f64 - (j / w) as f64, (i % w) as f64 - (j % w) as f64);
            (dy * dy + dx * dx).sqrt()
        };
        let directed = |p: &[usize], q: &[usize]| {
            p.iter()
                .map(|&i| q.iter().map(|&j| d(i, j)).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max)
        };
        directed(&pa, &pb).max(directed(&pb, &pa))
    }

    fn masks(h: usize, w: usize) -> impl Strategy<Value = InstanceMask> {
        proptest::collection::vec(proptest::bool::weighted(0.4), h * w)
            .prop_filter("nonempty", |b| b.iter().any(|&x| x))
            .prop_map(move |b| blob(h, w, b))
    }

    proptest! {
        #[test]
        fn hausdorff_matches_brute_force(
            (a, b) in (2usize..12, 2usize..12).prop_flat_map(|(h, w)| (masks(h, w), masks(h, w)))
        ) {
            prop_assert_eq!(hausdorff(&a, &b).unwrap(), brute_hausdorff(&a, &b));
            prop_assert_eq!(hausdorff(&a, &b).unwrap(), hausdorff(&b, &a).unwrap());
        }

        #[test]
        fn hausdorff_triangle(
            (a, b, c) in (2usize..10, 2usize..10).prop_flat_map(|(h, w)| (masks(h, w), masks(h, w), masks(h, w)))
        ) {
            let ab = hausdorff(&a, &b).unwrap();
            let bc = hausdorff(&b, &c).unwrap();
            let ac = hausdorff(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
        }

        #[test]
        fn dice_symmetric_and_one_only_on_equality(
            (a, b) in (1usize..8, 1usize..8).prop_flat_map(|(h, w)| (masks(h, w), masks(h, w)))
        ) {
            let d = dice(&a, &b).unwrap();
            prop_assert_eq!(d, dice(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert_eq!(d == 1.0, a == b);
            prop_assert_eq!(object_dice(std::slice::from_ref(&a), std::slice::from_ref(&b)).unwrap(), d);
        }
    }

    #[test]
    fn report_of_perfect_and_empty_predictions() {
        let gt = ClassMask::new(2, 4, 3, vec![0, 0, 2, 1, 2, 2, 2, 1]).unwrap();
        let r = evaluate("a", &gt, &gt, None).unwrap();
        assert_eq!(r.mean_dice(), 1.0);
        assert_eq!(r.object_dice, 1.0);
        assert_eq!(r.hausdorff, Some(0.0));
        assert_eq!((r.gt_instances, r.pred_instances), (2, 2));
        let empty = ClassMask::uniform(2, 4, 3, 2);
        let r = evaluate("b", &empty, &gt, None).unwrap();
        assert_eq!(r.mean_dice(), 0.0);
        assert_eq!(r.object_dice, 0.0);
        assert_eq!(r.hausdorff, None);
        let csv = reports_csv(&[r]);
        assert!(csv.lines().last().unwrap().starts_with("mean,0.000000,0.000000,0.000000"));
    }

    #[test]
    fn curve_of_saturated_labels_is_flat() {
        let gt = ClassMask::new(1, 3, 2, vec![0, 1, 0]).unwrap();
        let snaps = vec![vec![gt.clone()], vec![gt.clone()]];
        let curve = approximation_curve(&snaps, &[&gt]).unwrap();
        assert_eq!(curve, vec![(0, 1.0), (1, 1.0)]);
    }
}

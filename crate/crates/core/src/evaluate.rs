//! Scoring a predictions database against a ground-truth database.
//!
//! Detection: per class, predictions are ranked by score (absent score counts
//! as 1.0, ties go to the lower objectid) and matched greedily to the
//! unmatched ground-truth box of the same image and class with the highest
//! IoU, provided it reaches the threshold. AP is the area under the
//! precision/recall curve after making precision non-increasing from the
//! right (all-point interpolation).
//!
//! Segmentation: per-class pixel intersection and union summed over all
//! image pairs; mIoU is the plain mean over classes with a non-zero union.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::formats::Skipped;
use crate::geometry::BBox;
use crate::media::{self, PixelBuffer};
use crate::store::AnnotationDb;

pub const DEFAULT_IOU_THRESH: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub objectid: i64,
    pub imagefile: String,
    pub class: String,
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub imagefile: String,
    pub class: String,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassDetection {
    pub ap: f64,
    pub num_gt: usize,
    pub num_pred: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub iou_thresh: f64,
    /// Classes present in the ground truth.
    pub per_class: BTreeMap<String, ClassDetection>,
    pub mean_ap: f64,
}

/// Precision/recall after each ranked prediction, plus TP/FP flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedMatches {
    pub is_tp: Vec<bool>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

fn ranking(preds: &[&Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .score
            .total_cmp(&preds[a].score)
            .then(preds[a].objectid.cmp(&preds[b].objectid))
    });
    order
}

/// Greedy matching of one class's predictions against its ground truth.
pub fn match_class(preds: &[&Detection], gts: &[&GroundTruth], iou_thresh: f64) -> RankedMatches {
    let mut by_image: HashMap<&str, Vec<(usize, &BBox)>> = HashMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_image.entry(g.imagefile.as_str()).or_default().push((i, &g.bbox));
    }
    let mut taken = vec![false; gts.len()];
    let mut is_tp = Vec::with_capacity(preds.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut precision = Vec::with_capacity(preds.len());
    let mut recall = Vec::with_capacity(preds.len());
    for idx in ranking(preds) {
        let p = preds[idx];
        let best = by_image
            .get(p.imagefile.as_str())
            .into_iter()
            .flatten()
            .filter(|(g, _)| !taken[*g])
            .map(|(g, b)| (*g, p.bbox.iou(b)))
            .fold(None, |best: Option<(usize, f64)>, (g, iou)| match best {
                Some((_, b)) if b >= iou => best,
                _ => Some((g, iou)),
            });
        let hit = match best {
            Some((g, iou)) if iou >= iou_thresh => {
                taken[g] = true;
                true
            }
            _ => false,
        };
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        is_tp.push(hit);
        precision.push(tp as f64 / (tp + fp) as f64);
        recall.push(if gts.is_empty() {
            0.0
        } else {
            tp as f64 / gts.len() as f64
        });
    }
    RankedMatches {
        is_tp,
        precision,
        recall,
    }
}

/// All-point interpolated AP for a ranked precision/recall sequence.
pub fn all_point_ap(precision: &[f64], recall: &[f64]) -> f64 {
    let mut envelope = precision.to_vec();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in recall.iter().zip(&envelope) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

/// Scores detections against ground truth, both already filtered to the
/// images under evaluation.
pub fn evaluate_detections(
    preds: &[Detection],
    gts: &[GroundTruth],
    iou_thresh: f64,
) -> DetectionResult {
    let mut classes: BTreeMap<&str, (Vec<&Detection>, Vec<&GroundTruth>)> = BTreeMap::new();
    for g in gts {
        classes.entry(g.class.as_str()).or_default().1.push(g);
    }
    for p in preds {
        if let Some(entry) = classes.get_mut(p.class.as_str()) {
            entry.0.push(p);
        }
    }
    let per_class: BTreeMap<String, ClassDetection> = classes
        .into_iter()
        .map(|(class, (ps, gs))| {
            let m = match_class(&ps, &gs, iou_thresh);
            let tp = m.is_tp.iter().filter(|t| **t).count();
            let result = ClassDetection {
                ap: all_point_ap(&m.precision, &m.recall),
                num_gt: gs.len(),
                num_pred: ps.len(),
                tp,
                fp: ps.len() - tp,
                fn_: gs.len() - tp,
            };
            (class.to_string(), result)
        })
        .collect();
    let mean_ap = if per_class.is_empty() {
        0.0
    } else {
        per_class.values().map(|c| c.ap).sum::<f64>() / per_class.len() as f64
    };
    DetectionResult {
        iou_thresh,
        per_class,
        mean_ap,
    }
}

fn common_images(pred: &AnnotationDb, gt: &AnnotationDb) -> Result<BTreeSet<String>> {
    let pred_images: BTreeSet<String> = pred.images(None)?.into_iter().map(|i| i.imagefile).collect();
    let common: BTreeSet<String> = gt
        .images(None)?
        .into_iter()
        .map(|i| i.imagefile)
        .filter(|f| pred_images.contains(f))
        .collect();
    if common.is_empty() {
        return Err(Error::InvalidArgument(
            "predictions and ground truth share no imagefile".into(),
        ));
    }
    Ok(common)
}

/// Evaluates the open predictions database against `gt`. Only images
/// present in both databases count; `where_object` narrows the objects on
/// both sides.
pub fn evaluate_detection_dbs(
    pred: &AnnotationDb,
    gt: &AnnotationDb,
    iou_thresh: f64,
    where_object: Option<&str>,
) -> Result<DetectionResult> {
    let common = common_images(pred, gt)?;
    let pred_objs = pred.object_records(where_object)?;
    let gt_objs = gt.object_records(where_object)?;
    let preds: Vec<Detection> = pred_objs
        .into_iter()
        .filter(|o| common.contains(&o.imagefile))
        .filter_map(|o| {
            Some(Detection {
                objectid: o.objectid,
                bbox: o.bbox?,
                score: o.score.unwrap_or(1.0),
                class: o.name.unwrap_or_default(),
                imagefile: o.imagefile,
            })
        })
        .collect();
    let gts: Vec<GroundTruth> = gt_objs
        .into_iter()
        .filter(|o| common.contains(&o.imagefile))
        .filter_map(|o| {
            Some(GroundTruth {
                bbox: o.bbox?,
                class: o.name.unwrap_or_default(),
                imagefile: o.imagefile,
            })
        })
        .collect();
    Ok(evaluate_detections(&preds, &gts, iou_thresh))
}

pub fn evaluate_detection(
    pred: &AnnotationDb,
    gt_db_path: &Path,
    iou_thresh: f64,
    where_object: Option<&str>,
) -> Result<DetectionResult> {
    let gt = AnnotationDb::open_read_only(gt_db_path)?;
    evaluate_detection_dbs(pred, &gt, iou_thresh, where_object)
}

impl fmt::Display for DetectionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "iou threshold: {}", self.iou_thresh)?;
        writeln!(f, "mean AP: {:.4}", self.mean_ap)?;
        for (class, c) in &self.per_class {
            writeln!(
                f,
                "class '{class}': AP {:.4}, gt {}, pred {}, TP {}, FP {}, FN {}",
                c.ap, c.num_gt, c.num_pred, c.tp, c.fp, c.fn_
            )?;
        }
        Ok(())
    }
}

impl DetectionResult {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        w.write_record(["class", "ap", "num_gt", "num_pred", "tp", "fp", "fn"])?;
        for (class, c) in &self.per_class {
            w.write_record([
                class.clone(),
                c.ap.to_string(),
                c.num_gt.to_string(),
                c.num_pred.to_string(),
                c.tp.to_string(),
                c.fp.to_string(),
                c.fn_.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassIou {
    pub intersection: u64,
    pub union: u64,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    /// Classes with a non-zero union.
    pub per_class: BTreeMap<u8, ClassIou>,
    pub miou: f64,
    pub images_evaluated: usize,
    pub skipped: Vec<Skipped>,
}

/// Per-class `(intersection, union)` pixel counts.
pub type PixelCounts = BTreeMap<u8, (u64, u64)>;

/// Adds one mask pair into `counts`. Labels outside `class_ids` (when given)
/// are ignored.
pub fn accumulate_masks(
    pred: &PixelBuffer,
    gt: &PixelBuffer,
    class_ids: Option<&[u8]>,
    counts: &mut PixelCounts,
) -> Result<()> {
    if (pred.width, pred.height) != (gt.width, gt.height) || pred.channels != 1 || gt.channels != 1 {
        return Err(Error::InvalidArgument(format!(
            "mask size mismatch: {}x{} vs {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    let wanted = |c: u8| class_ids.map_or(true, |ids| ids.contains(&c));
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        if p == g {
            if wanted(p) {
                let e = counts.entry(p).or_default();
                e.0 += 1;
                e.1 += 1;
            }
        } else {
            if wanted(p) {
                counts.entry(p).or_default().1 += 1;
            }
            if wanted(g) {
                counts.entry(g).or_default().1 += 1;
            }
        }
    }
    Ok(())
}

pub fn segmentation_from_counts(counts: &PixelCounts) -> BTreeMap<u8, ClassIou> {
    counts
        .iter()
        .filter(|(_, (_, u))| *u > 0)
        .map(|(&c, &(i, u))| {
            (
                c,
                ClassIou {
                    intersection: i,
                    union: u,
                    iou: i as f64 / u as f64,
                },
            )
        })
        .collect()
}

pub fn evaluate_segmentation_dbs(
    pred: &AnnotationDb,
    gt: &AnnotationDb,
    rootdir: &Path,
    class_ids: Option<&[u8]>,
) -> Result<SegmentationResult> {
    let common = common_images(pred, gt)?;
    let pred_masks: HashMap<String, Option<String>> = pred
        .images(None)?
        .into_iter()
        .map(|i| (i.imagefile, i.maskfile))
        .collect();
    let mut counts = PixelCounts::new();
    let mut skipped = Vec::new();
    let mut images_evaluated = 0;
    for img in gt.images(None)? {
        if !common.contains(&img.imagefile) {
            continue;
        }
        let pred_mask = pred_masks.get(&img.imagefile).cloned().flatten();
        let (Some(pm), Some(gm)) = (pred_mask, img.maskfile.clone()) else {
            log::warn!("skipping {}: missing maskfile", img.imagefile);
            skipped.push(Skipped {
                path: PathBuf::from(&img.imagefile),
                reason: "missing maskfile".into(),
            });
            continue;
        };
        let p = media::read_mask(rootdir, &pm)?;
        let g = media::read_mask(rootdir, &gm)?;
        accumulate_masks(&p, &g, class_ids, &mut counts).map_err(|e| {
            Error::InvalidArgument(format!("{}: {e}", img.imagefile))
        })?;
        images_evaluated += 1;
    }
    let per_class = segmentation_from_counts(&counts);
    let miou = if per_class.is_empty() {
        0.0
    } else {
        per_class.values().map(|c| c.iou).sum::<f64>() / per_class.len() as f64
    };
    Ok(SegmentationResult {
        per_class,
        miou,
        images_evaluated,
        skipped,
    })
}

pub fn evaluate_segmentation(
    pred: &AnnotationDb,
    gt_db_path: &Path,
    rootdir: &Path,
    class_ids: Option<&[u8]>,
) -> Result<SegmentationResult> {
    let gt = AnnotationDb::open_read_only(gt_db_path)?;
    evaluate_segmentation_dbs(pred, &gt, rootdir, class_ids)
}

impl fmt::Display for SegmentationResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "images evaluated: {}", self.images_evaluated)?;
        writeln!(f, "images skipped: {}", self.skipped.len())?;
        writeln!(f, "mIoU: {:.4}", self.miou)?;
        for (class, c) in &self.per_class {
            writeln!(
                f,
                "class {class}: IoU {:.4}, intersection {}, union {}",
                c.iou, c.intersection, c.union
            )?;
        }
        Ok(())
    }
}

impl SegmentationResult {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        w.write_record(["class", "iou", "intersection", "union"])?;
        for (class, c) in &self.per_class {
            w.write_record([
                class.to_string(),
                c.iou.to_string(),
                c.intersection.to_string(),
                c.union.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

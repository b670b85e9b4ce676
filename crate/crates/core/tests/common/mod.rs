//! Random batch construction shared by the property tests.
#![allow(dead_code)]

use pisa_core::assignment::{assign, Assignment, GroundTruth, SampleBatch};
use pisa_core::geometry::{BBox, Delta};
use pisa_core::losses::softmax;
use proptest::prelude::*;

pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Clone)]
pub struct BatchSpec {
    pub images: Vec<(Vec<(f64, f64, f64, f64, usize)>, Vec<(f64, f64, f64, f64)>)>,
    pub logits: Vec<[f64; NUM_CLASSES + 1]>,
    pub deltas: Vec<[f64; 4]>,
}

fn raw_box() -> impl Strategy<Value = (f64, f64, f64, f64)> {
    (0.0..60.0f64, 0.0..60.0f64, 6.0..30.0f64, 6.0..30.0f64)
}

/// One or more images with objects and proposals clustered around them.
pub fn batch_spec(max_props: usize) -> impl Strategy<Value = BatchSpec> {
    let image = (
        prop::collection::vec((raw_box(), 0..NUM_CLASSES).prop_map(|((x, y, w, h), c)| (x, y, w, h, c)), 1..4),
        prop::collection::vec((0usize..4, -4.0..4.0f64, -4.0..4.0f64, -4.0..4.0f64, -4.0..4.0f64), 1..max_props),
    )
        .prop_map(|(objs, jitters)| {
            let props: Vec<(f64, f64, f64, f64)> = jitters
                .iter()
                .map(|&(k, a, b, c, d)| {
                    let (x, y, w, h, _) = objs[k % objs.len()];
                    let (w, h) = ((w + c).max(2.0), (h + d).max(2.0));
                    (x + a, y + b, w, h)
                })
                .collect();
            (objs, props)
        });
    prop::collection::vec(image, 1..4).prop_flat_map(|images| {
        let n: usize = images.iter().map(|(_, p)| p.len()).sum();
        (
            Just(images),
            prop::collection::vec(prop::array::uniform4(-3.0..3.0f64), n),
            prop::collection::vec(prop::array::uniform4(-0.2..0.2f64), n),
        )
            .prop_map(|(images, logits, deltas)| BatchSpec { images, logits, deltas })
    })
}

pub fn build(spec: &BatchSpec) -> SampleBatch {
    let mut proposals = Vec::new();
    let mut image_id = Vec::new();
    let mut gt_boxes = Vec::new();
    let mut matches = Vec::new();
    for (img, (objs, props)) in spec.images.iter().enumerate() {
        let gts: Vec<GroundTruth> = objs
            .iter()
            .map(|&(x, y, w, h, c)| GroundTruth {
                bbox: BBox::new(x, y, x + w, y + h),
                class_id: c,
            })
            .collect();
        let boxes: Vec<BBox> = props.iter().map(|&(x, y, w, h)| BBox::new(x, y, x + w, y + h)).collect();
        let a = assign(&boxes, &gts, NUM_CLASSES, 0.5, 0.4).unwrap();
        let offset = gt_boxes.len();
        for mut m in a.matches {
            m.matched_gt = m.matched_gt.map(|g| g + offset);
            matches.push(m);
        }
        gt_boxes.extend(gts.iter().map(|g| g.bbox));
        image_id.extend(std::iter::repeat_n(img, boxes.len()));
        proposals.extend(boxes);
    }
    let assignment = Assignment {
        num_classes: NUM_CLASSES,
        matches,
    };
    let scores = spec.logits.iter().map(|l| softmax(l)).collect();
    let deltas = spec.deltas.iter().map(|&d| Delta::from(d)).collect();
    SampleBatch::from_scores(proposals, image_id, gt_boxes, assignment, scores, deltas).unwrap()
}

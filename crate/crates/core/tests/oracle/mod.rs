//! Brute-force reference implementations used by the property tests and the
//! acceptance suite. They favour directness over speed and share no code
//! with the library.
#![allow(dead_code)]

/// Overlap of two `[x1, y1, x2, y2]` boxes computed from sorted edges.
pub fn iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
        let mut e = [(a0, 0), (a1, 0), (b0, 1), (b1, 1)];
        e.sort_by(|x, y| x.0.total_cmp(&y.0));
        // Disjoint when both edges of one interval come first.
        if e[0].1 == e[1].1 {
            0.0
        } else {
            e[2].0 - e[1].0
        }
    }
    let area = |r: [f64; 4]| (r[2] - r[0]).max(0.0) * (r[3] - r[1]).max(0.0);
    let inter = overlap(a[0], a[2], b[0], b[2]) * overlap(a[1], a[3], b[1], b[3]);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Hierarchical rank of every item: sort inside each group, then emit the
/// rank-0 block sorted by key, the rank-1 block, and so on. Ties go to the
/// lower index. Returns `(local_rank, hlr)` per item.
pub fn hlr(keys: &[f64], groups: &[usize]) -> Vec<(usize, usize)> {
    let n = keys.len();
    let better = |a: usize, b: usize| keys[a] > keys[b] || (keys[a] == keys[b] && a < b);
    let mut local = vec![0; n];
    for i in 0..n {
        local[i] = (0..n).filter(|&j| groups[j] == groups[i] && better(j, i)).count();
    }
    let depth = local.iter().copied().max().map_or(0, |d| d + 1);
    let mut sequence = Vec::with_capacity(n);
    for level in 0..depth {
        let mut block: Vec<usize> = (0..n).filter(|&i| local[i] == level).collect();
        // Selection sort keeps the oracle independent of the library's comparator.
        for s in 0..block.len() {
            let mut best = s;
            for t in s + 1..block.len() {
                if better(block[t], block[best]) {
                    best = t;
                }
            }
            block.swap(s, best);
        }
        sequence.extend(block);
    }
    let mut out = vec![(0, 0); n];
    for (rank, &i) in sequence.iter().enumerate() {
        out[i] = (local[i], rank);
    }
    out
}

/// Greedy NMS by repeatedly taking the best remaining box and deleting
/// everything overlapping it by more than `thr`. `same` restricts which
/// pairs may suppress each other. Returns the cluster seed of every item.
pub fn nms_clusters(boxes: &[[f64; 4]], scores: &[f64], thr: f64, same: impl Fn(usize, usize) -> bool) -> Vec<usize> {
    let n = boxes.len();
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut seed = vec![usize::MAX; n];
    while !remaining.is_empty() {
        let mut top = 0;
        for k in 1..remaining.len() {
            let (a, b) = (remaining[k], remaining[top]);
            if scores[a] > scores[b] || (scores[a] == scores[b] && a < b) {
                top = k;
            }
        }
        let head = remaining.remove(top);
        seed[head] = head;
        remaining.retain(|&j| {
            let gone = same(head, j) && iou(boxes[head], boxes[j]) > thr;
            if gone {
                seed[j] = head;
            }
            !gone
        });
    }
    seed
}

/// Kept indices of plain greedy NMS, best first.
pub fn nms_keep(boxes: &[[f64; 4]], scores: &[f64], thr: f64) -> Vec<usize> {
    let seeds = nms_clusters(boxes, scores, thr, |_, _| true);
    let mut keep: Vec<usize> = (0..boxes.len()).filter(|&i| seeds[i] == i).collect();
    keep.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    keep
}

/// Greedy TP assignment: best score first, each detection claims the
/// unclaimed ground truth it overlaps most (first on ties) if that overlap
/// reaches `theta`.
pub fn match_flags(dets: &[([f64; 4], f64)], gts: &[[f64; 4]], theta: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].1.total_cmp(&dets[a].1).then(a.cmp(&b)));
    let mut claimed = vec![false; gts.len()];
    let mut flags = vec![false; dets.len()];
    for d in order {
        let candidates: Vec<(usize, f64)> = (0..gts.len())
            .filter(|&g| !claimed[g])
            .map(|g| (g, iou(dets[d].0, gts[g])))
            .collect();
        let mut best: Option<(usize, f64)> = None;
        for (g, o) in candidates {
            match best {
                Some((_, b)) if b >= o => {}
                _ => best = Some((g, o)),
            }
        }
        if let Some((g, o)) = best {
            if o >= theta {
                claimed[g] = true;
                flags[d] = true;
            }
        }
    }
    flags
}

/// 101-point interpolated AP from the definition: at each recall level take
/// the best precision reached at that recall or beyond.
pub fn average_precision(flags: &[bool], scores: &[f64], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..flags.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut points = Vec::new();
    let mut tp = 0usize;
    for (seen, &i) in order.iter().enumerate() {
        if flags[i] {
            tp += 1;
        }
        points.push((tp as f64 / n_gt as f64, tp as f64 / (seen + 1) as f64));
    }
    let mut sum = 0.0;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        let best = points
            .iter()
            .filter(|(rec, _)| *rec >= r)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
        sum += best;
    }
    Some(sum / 101.0)
}

/// Central finite difference of `f` at `x`.
pub fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

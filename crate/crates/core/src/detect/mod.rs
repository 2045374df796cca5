//! Box prediction, sorting and non-maximum suppression.
//!
//! The routines are generic over [`Backend`] so the same code yields the
//! secure result on a [`Party`] and the reference result on [`Plain`].
//!
//! [`Plain`]: crate::nn::Plain

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixed::trunc_public;
use crate::nn::backend::argsort_desc_public;
use crate::nn::{BNParams, Backend, ConvParams, Tensor};
use crate::party::Party;
use crate::ring::RingElement;

type R = RingElement;

/// Corner coordinates and confidence of one box (shares or plaintext).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxShare {
    pub x1: R,
    pub y1: R,
    pub x2: R,
    pub y2: R,
    pub score: R,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxSet {
    pub boxes: Vec<BoxShare>,
}

impl BoxSet {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// `[x1, y1, x2, y2, score]` as columns.
    pub fn columns(&self) -> [Vec<R>; 5] {
        let col = |f: fn(&BoxShare) -> R| self.boxes.iter().map(f).collect::<Vec<R>>();
        [
            col(|b| b.x1),
            col(|b| b.y1),
            col(|b| b.x2),
            col(|b| b.y2),
            col(|b| b.score),
        ]
    }

    pub fn from_columns(x1: &[R], y1: &[R], x2: &[R], y2: &[R], score: &[R]) -> Result<BoxSet> {
        let n = x1.len();
        if [y1.len(), x2.len(), y2.len(), score.len()].iter().any(|&m| m != n) {
            return Err(Error::Shape("box columns differ in length".into()));
        }
        Ok(BoxSet {
            boxes: (0..n)
                .map(|i| BoxShare {
                    x1: x1[i],
                    y1: y1[i],
                    x2: x2[i],
                    y2: y2[i],
                    score: score[i],
                })
                .collect(),
        })
    }

    pub fn subset(&self, idx: &[usize]) -> BoxSet {
        BoxSet {
            boxes: idx.iter().map(|&i| self.boxes[i]).collect(),
        }
    }
}

/// Anchor clustering settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    pub clusters: usize,
    pub iterations: usize,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig {
            clusters: 9,
            iterations: 3,
        }
    }
}

impl AnchorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 || self.iterations == 0 {
            return Err(Error::Config(
                "anchor clustering needs at least one cluster and one iteration".into(),
            ));
        }
        Ok(())
    }
}

impl Party {
    /// Public descending order of shared scores.
    ///
    /// Both parties subtract their shares of one bounded dealer offset from
    /// every score and open the results in a single round.
    pub fn sec_ds(&mut self, scores: &[R]) -> Result<Vec<usize>> {
        if scores.is_empty() {
            return Ok(Vec::new());
        }
        self.scoped("sec_ds", |p| {
            let rho = p.dealer().offsets(1)?[0];
            let masked: Vec<R> = scores.iter().map(|&u| u - rho).collect();
            let opened = p.open("ds.masked_scores", &masked)?;
            Ok(argsort_desc_public(&opened))
        })
    }
}

/// Pairwise IoU of `a[i]` and `b[i]`. `areas` supplies public areas (the
/// sum of both areas per pair); otherwise they are computed on shares.
pub fn sec_iou<B: Backend>(b: &mut B, a: &[&[R]; 4], c: &[&[R]; 4], areas: Option<&[R]>) -> Result<Vec<R>> {
    let n = a[0].len();
    if a.iter().chain(c.iter()).any(|col| col.len() != n) {
        return Err(Error::Shape("box columns differ in length".into()));
    }
    b.scoped("sec_iou", |b| {
        let lhs: Vec<R> = a.iter().flat_map(|col| col.iter().copied()).collect();
        let rhs: Vec<R> = c.iter().flat_map(|col| col.iter().copied()).collect();
        let f = b.less_than(&lhs, &rhs)?;
        // max of the low corners, min of the high corners
        let first: Vec<R> = (0..4 * n).map(|i| if i < 2 * n { lhs[i] } else { rhs[i] }).collect();
        let second: Vec<R> = (0..4 * n).map(|i| if i < 2 * n { rhs[i] } else { lhs[i] }).collect();
        let inner = b.select(&f, &first, &second)?;
        let extent: Vec<R> = (0..2 * n).map(|i| inner[2 * n + i] - inner[i]).collect();
        let zero = vec![R::ZERO; 2 * n];
        let neg = b.less_than(&extent, &zero)?;
        let clipped = b.select(&neg, &extent, &zero)?;
        let sum_areas = match areas {
            Some(s) => s.iter().map(|&v| b.constant(v)).collect::<Vec<R>>(),
            None => {
                let w: Vec<R> = (0..n).flat_map(|i| [a[2][i] - a[0][i], c[2][i] - c[0][i]]).collect();
                let h: Vec<R> = (0..n).flat_map(|i| [a[3][i] - a[1][i], c[3][i] - c[1][i]]).collect();
                let mut x = clipped[..n].to_vec();
                x.extend(w);
                let mut y = clipped[n..].to_vec();
                y.extend(h);
                let prods = b.mul(&x, &y)?;
                let inter = prods[..n].to_vec();
                let sums: Vec<R> = (0..n).map(|i| prods[n + 2 * i] + prods[n + 2 * i + 1]).collect();
                let union: Vec<R> = sums.iter().zip(&inter).map(|(&s, &t)| s - t).collect();
                return b.divide(&inter, &union, true);
            }
        };
        let inter = b.mul(&clipped[..n], &clipped[n..])?;
        let union: Vec<R> = sum_areas.iter().zip(&inter).map(|(&s, &t)| s - t).collect();
        b.divide(&inter, &union, true)
    })
}

/// Result of suppression: kept indices in score order and the kept boxes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NmsOutput {
    pub kept: Vec<usize>,
    pub boxes: BoxSet,
}

/// Greedy suppression: the best remaining box is kept and every other
/// remaining box with IoU at least `eta` against it is deleted.
///
/// Widths and heights are opened to get public areas; corners stay shared.
pub fn sec_nms<B: Backend>(b: &mut B, boxes: &BoxSet, eta: f64) -> Result<NmsOutput> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::Config(format!("suppression threshold {eta} outside (0, 1)")));
    }
    if boxes.is_empty() {
        return Ok(NmsOutput {
            kept: Vec::new(),
            boxes: BoxSet::default(),
        });
    }
    b.scoped("sec_nms", |b| {
        let codec = b.codec();
        let [x1, y1, x2, y2, score] = boxes.columns();
        let n = boxes.len();
        let mut extents: Vec<R> = (0..n).map(|i| x2[i] - x1[i]).collect();
        extents.extend((0..n).map(|i| y2[i] - y1[i]));
        let wh = b.reveal("nms.extents", &extents)?;
        let area: Vec<R> = (0..n)
            .map(|i| trunc_public(wh[i] * wh[n + i], codec.frac_bits))
            .collect();
        let mut remaining = b.argsort_desc(&score)?;
        let eta_bar = b.constant(codec.encode(eta)?);
        let mut kept = Vec::new();
        while let Some((&top, rest)) = remaining.split_first() {
            kept.push(top);
            if rest.is_empty() {
                break;
            }
            let m = rest.len();
            let rep = |col: &[R]| vec![col[top]; m];
            let pick = |col: &[R]| rest.iter().map(|&k| col[k]).collect::<Vec<R>>();
            let (ta, tb, tc, td) = (rep(&x1), rep(&y1), rep(&x2), rep(&y2));
            let (ka, kb, kc, kd) = (pick(&x1), pick(&y1), pick(&x2), pick(&y2));
            let sums: Vec<R> = rest.iter().map(|&k| area[top] + area[k]).collect();
            let iou = sec_iou(b, &[&ta, &tb, &tc, &td], &[&ka, &kb, &kc, &kd], Some(&sums))?;
            let below = b.less_than(&iou, &vec![eta_bar; m])?;
            let keep = b.reveal("nms.keep", &below)?;
            remaining = rest
                .iter()
                .zip(&keep)
                .filter(|(_, &bit)| bit == R::ONE)
                .map(|(&k, _)| k)
                .collect();
        }
        Ok(NmsOutput {
            boxes: boxes.subset(&kept),
            kept,
        })
    })
}

/// Anchor sizes from clustering plus each sample's cluster as one-hot bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clustering {
    pub widths: Vec<R>,
    pub heights: Vec<R>,
    /// `assignment[j * k + c]` is 1 when sample `j` belongs to cluster `c`.
    pub assignment: Vec<R>,
}

/// K-means over `(w, h)` sizes with distance `0.5 - IoU` of
/// origin-aligned boxes. Strict comparisons keep the lowest cluster index
/// on ties; an empty cluster keeps its previous center.
pub fn sec_kmeans<B: Backend>(
    b: &mut B,
    sample_w: &[R],
    sample_h: &[R],
    init_w: &[R],
    init_h: &[R],
    cfg: &AnchorConfig,
) -> Result<Clustering> {
    cfg.validate()?;
    let (n, k) = (sample_w.len(), init_w.len());
    if sample_h.len() != n || init_h.len() != k || k != cfg.clusters || n == 0 {
        return Err(Error::Shape(format!(
            "{n} samples and {k} initial centers for {} clusters",
            cfg.clusters
        )));
    }
    b.scoped("sec_kmeans", |b| {
        let codec = b.codec();
        let one = b.constant(R::ONE);
        let half = b.constant(codec.encode(0.5)?);
        let scale = R::pow2(codec.frac_bits as i64);
        let sample_area = b.mul(sample_w, sample_h)?;
        let (mut cw, mut ch) = (init_w.to_vec(), init_h.to_vec());
        let mut onehot = vec![R::ZERO; n * k];
        for _ in 0..cfg.iterations {
            // pairs (j, c) in row-major order
            let pw: Vec<R> = (0..n * k).map(|i| sample_w[i / k]).collect();
            let ph: Vec<R> = (0..n * k).map(|i| sample_h[i / k]).collect();
            let qw: Vec<R> = (0..n * k).map(|i| cw[i % k]).collect();
            let qh: Vec<R> = (0..n * k).map(|i| ch[i % k]).collect();
            let mins = b.min(&[pw, ph].concat(), &[qw, qh].concat())?;
            let mut x = mins[..n * k].to_vec();
            x.extend_from_slice(&cw);
            let mut y = mins[n * k..].to_vec();
            y.extend_from_slice(&ch);
            let prods = b.mul(&x, &y)?;
            let (inter, center_area) = prods.split_at(n * k);
            let union: Vec<R> = (0..n * k)
                .map(|i| sample_area[i / k] + center_area[i % k] - inter[i])
                .collect();
            let iou = b.divide(inter, &union, true)?;
            let dist: Vec<R> = iou.iter().map(|&o| half - o).collect();

            let mut best: Vec<R> = (0..n).map(|j| dist[j * k]).collect();
            for j in 0..n {
                onehot[j * k] = one;
                for c in 1..k {
                    onehot[j * k + c] = R::ZERO;
                }
            }
            for c in 1..k {
                let cand: Vec<R> = (0..n).map(|j| dist[j * k + c]).collect();
                let f = b.less_than(&cand, &best)?;
                let mut lhs = Vec::with_capacity(n * (c + 1));
                let mut rhs = Vec::with_capacity(n * (c + 1));
                for j in 0..n {
                    lhs.push(f[j]);
                    rhs.push(cand[j] - best[j]);
                    for m in 0..c {
                        lhs.push(f[j]);
                        rhs.push(onehot[j * k + m]);
                    }
                }
                let prods = b.mul_raw(&lhs, &rhs)?;
                for j in 0..n {
                    let base = j * (c + 1);
                    best[j] += prods[base];
                    for m in 0..c {
                        onehot[j * k + m] -= prods[base + 1 + m];
                    }
                    onehot[j * k + c] = f[j];
                }
            }

            let bits: Vec<R> = [onehot.clone(), onehot.clone()].concat();
            let vals: Vec<R> = (0..2 * n * k)
                .map(|i| {
                    let j = (i % (n * k)) / k;
                    if i < n * k {
                        sample_w[j]
                    } else {
                        sample_h[j]
                    }
                })
                .collect();
            let weighted = b.mul_raw(&bits, &vals)?;
            let mut sums = vec![R::ZERO; 2 * k];
            for (i, &v) in weighted.iter().enumerate() {
                let c = i % k;
                sums[if i < n * k { c } else { k + c }] += v;
            }
            let counts: Vec<R> = (0..k)
                .map(|c| (0..n).map(|j| onehot[j * k + c]).sum::<R>() * scale)
                .collect();
            let empty = b.less_than(&counts, &vec![half; k])?;
            let denom: Vec<R> = (0..k).map(|c| counts[c] + empty[c] * scale).collect();
            let means = b.divide(&sums, &[denom.clone(), denom].concat(), false)?;
            let prev = [cw.clone(), ch.clone()].concat();
            let updated = b.select(&[empty.clone(), empty].concat(), &means, &prev)?;
            cw = updated[..k].to_vec();
            ch = updated[k..].to_vec();
        }
        Ok(Clustering {
            widths: cw,
            heights: ch,
            assignment: onehot,
        })
    })
}

/// The prediction head and its layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub conv: ConvParams,
    pub bn: BNParams,
    pub anchors: usize,
    pub classes: usize,
    /// Input pixels per grid cell.
    pub stride: usize,
}

impl HeadParams {
    pub fn channels_per_anchor(&self) -> usize {
        5 + self.classes
    }

    pub fn validate(&self, features: [usize; 3]) -> Result<()> {
        let need = self.anchors * self.channels_per_anchor();
        if self.conv.out_channels != need || self.bn.channels() != need {
            return Err(Error::Shape(format!(
                "head for {} anchors and {} classes needs {need} output channels",
                self.anchors, self.classes
            )));
        }
        self.conv.output_shape(features).map(|_| ())
    }
}

/// Decoded predictions: boxes in pixels with objectness as the score, and
/// class probabilities as `class_probs[class][box]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Predictions {
    pub boxes: BoxSet,
    pub class_probs: Vec<Vec<R>>,
    pub anchors: Clustering,
}

/// Box index of anchor `a` at cell `(gy, gx)` on a `g x g` grid.
pub fn box_index(a: usize, gy: usize, gx: usize, g: usize) -> usize {
    (a * g + gy) * g + gx
}

/// Anchor clustering, then head (conv, batch norm, sigmoid) over the
/// feature map and box decoding against the clustered anchors.
pub fn sec_bbpred<B: Backend>(
    b: &mut B,
    features: &Tensor,
    head: &HeadParams,
    samples: (&[R], &[R]),
    init: (&[R], &[R]),
    cfg: &AnchorConfig,
) -> Result<Predictions> {
    head.validate(features.shape)?;
    if cfg.clusters != head.anchors {
        return Err(Error::Config(format!(
            "{} clusters for a head with {} anchors",
            cfg.clusters, head.anchors
        )));
    }
    b.scoped("sec_bbpred", |b| {
        let anchors = sec_kmeans(b, samples.0, samples.1, init.0, init.1, cfg)?;
        let codec = b.codec();
        let (_, normed) = b.conv_bn(features, &head.conv, &head.bn)?;
        let sig = b.sigmoid(&normed.data)?;
        let [_, gh, gw] = normed.shape;
        if gh != gw {
            return Err(Error::Shape(format!("head expects a square grid, got {gh}x{gw}")));
        }
        let (g, per, plane) = (gh, head.channels_per_anchor(), gh * gw);
        let nbox = head.anchors * plane;
        let chan = |a: usize, t: usize| &sig[(a * per + t) * plane..(a * per + t + 1) * plane];

        // half extent = 2 * anchor * s^2
        let mut sw = Vec::with_capacity(2 * nbox);
        for t in [2, 3] {
            for a in 0..head.anchors {
                sw.extend_from_slice(chan(a, t));
            }
        }
        let sq = b.mul(&sw, &sw)?;
        let anchor_rep: Vec<R> = (0..2 * nbox)
            .map(|i| {
                let a = (i % nbox) / plane;
                if i < nbox {
                    anchors.widths[a]
                } else {
                    anchors.heights[a]
                }
            })
            .collect();
        let scaled = b.mul(&sq, &anchor_rep)?;
        let two = R::from(2u64);
        let stride2 = R::from(2 * head.stride as u64);
        let (mut x1, mut y1, mut x2, mut y2, mut score) = (
            Vec::with_capacity(nbox),
            Vec::with_capacity(nbox),
            Vec::with_capacity(nbox),
            Vec::with_capacity(nbox),
            Vec::with_capacity(nbox),
        );
        for a in 0..head.anchors {
            for gy in 0..g {
                for gx in 0..g {
                    let cell = gy * g + gx;
                    let i = box_index(a, gy, gx, g);
                    let ox = b.constant(codec.encode((gx as f64 - 0.5) * head.stride as f64)?);
                    let oy = b.constant(codec.encode((gy as f64 - 0.5) * head.stride as f64)?);
                    let cx = chan(a, 0)[cell] * stride2 + ox;
                    let cy = chan(a, 1)[cell] * stride2 + oy;
                    let (hw, hh) = (scaled[i] * two, scaled[nbox + i] * two);
                    x1.push(cx - hw);
                    x2.push(cx + hw);
                    y1.push(cy - hh);
                    y2.push(cy + hh);
                    score.push(chan(a, 4)[cell]);
                }
            }
        }
        let class_probs = (0..head.classes)
            .map(|c| (0..head.anchors).flat_map(|a| chan(a, 5 + c).to_vec()).collect())
            .collect();
        Ok(Predictions {
            boxes: BoxSet::from_columns(&x1, &y1, &x2, &y2, &score)?,
            class_probs,
            anchors,
        })
    })
}

//! End-to-end detection: configuration, the shared detection program, the
//! plaintext oracle, secure inference and their comparison.

pub mod bench;
pub mod image;
pub mod weights;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::detect::{sec_bbpred, sec_nms, AnchorConfig, BoxSet};
use crate::error::{Error, Result};
use crate::fixed::FixedPointCodec;
use crate::harness::{run_two_party, DealerSource, SessionConfig, TransportKind};
use crate::nn::{Backend, Plain, Tensor};
use crate::party::DEFAULT_MASK_BOUND;
use crate::ring::RingElement;
use crate::sharing::{reconstruct_vec, split_vec, DealerBundle, DealerCounts, DealerGenerator};
use crate::transport::SessionTranscript;

pub use self::image::{reconstruct_image, split_image, Image};
pub use weights::{Model, NetworkConfig};

type R = RingElement;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    #[default]
    Beaver,
    Grr3,
}

/// Sample box sizes clustered into anchors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnchorSettings {
    pub clusters: usize,
    pub iterations: usize,
    /// `(width, height)` in pixels.
    pub samples: Vec<[f64; 2]>,
}

impl Default for AnchorSettings {
    fn default() -> Self {
        AnchorSettings {
            clusters: 3,
            iterations: 3,
            samples: vec![
                [6.0, 8.0],
                [8.0, 6.0],
                [10.0, 12.0],
                [12.0, 9.0],
                [16.0, 18.0],
                [18.0, 14.0],
                [20.0, 24.0],
                [24.0, 20.0],
                [30.0, 34.0],
                [36.0, 28.0],
                [40.0, 44.0],
                [48.0, 40.0],
            ],
        }
    }
}

impl AnchorSettings {
    /// Evenly spaced samples as initial centers.
    pub fn initial_centers(&self) -> Vec<[f64; 2]> {
        let n = self.samples.len();
        (0..self.clusters)
            .map(|k| self.samples[k * n / self.clusters.max(1)])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub codec: FixedPointCodec,
    pub engine: Engine,
    pub network: NetworkConfig,
    pub anchors: AnchorSettings,
    /// Suppression threshold.
    pub eta: f64,
    pub transport: TransportKind,
    pub dealer_seed: u64,
    pub share_seed: u64,
    pub weights_seed: u64,
    pub mask_bound: f64,
    /// Weights file; random seeded weights when absent.
    pub weights: Option<PathBuf>,
    /// Dealer bundle files for party 1 and party 2; streamed when absent.
    pub dealer_files: Option<[PathBuf; 2]>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            codec: FixedPointCodec::default(),
            engine: Engine::Beaver,
            network: NetworkConfig::default(),
            anchors: AnchorSettings::default(),
            eta: 0.5,
            transport: TransportKind::Inproc,
            dealer_seed: 0,
            share_seed: 1,
            weights_seed: 2,
            mask_bound: DEFAULT_MASK_BOUND,
            weights: None,
            dealer_files: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<PipelineConfig> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = PipelineConfig::from_toml(&text)?;
        // relative paths resolve against the config file
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(w) = &cfg.weights {
            cfg.weights = Some(base.join(w));
        }
        if let Some([a, b]) = &cfg.dealer_files {
            cfg.dealer_files = Some([base.join(a), base.join(b)]);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.codec.validate()?;
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::Config(format!("eta = {} must lie in (0, 1)", self.eta)));
        }
        if !(self.mask_bound > 0.0) {
            return Err(Error::Config("mask bound must be positive".into()));
        }
        AnchorConfig {
            clusters: self.anchors.clusters,
            iterations: self.anchors.iterations,
        }
        .validate()?;
        if self.anchors.samples.len() < self.anchors.clusters {
            return Err(Error::Config(format!(
                "{} anchor samples for {} clusters",
                self.anchors.samples.len(),
                self.anchors.clusters
            )));
        }
        if self.anchors.samples.iter().flatten().any(|&v| !(v > 0.0)) {
            return Err(Error::Config("anchor sample sizes must be positive".into()));
        }
        for p in self.weights.iter().chain(self.dealer_files.iter().flatten()) {
            if !p.exists() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn session(&self) -> SessionConfig {
        SessionConfig {
            codec: self.codec,
            transport: self.transport,
            session: 1,
            party_seed: self.share_seed ^ 0x7061_7274,
            mask_bound: self.mask_bound,
        }
    }

    /// Loads the weights file, or builds seeded random weights.
    pub fn model(&self) -> Result<Model> {
        let model = match &self.weights {
            Some(p) => Model::load(p)?,
            None => Model::random(&self.network, self.anchors.clusters, self.weights_seed)?,
        };
        if model.head.anchors != self.anchors.clusters {
            return Err(Error::Config(format!(
                "weights have {} anchors, config asks for {}",
                model.head.anchors, self.anchors.clusters
            )));
        }
        Ok(model)
    }

    fn anchor_config(&self) -> AnchorConfig {
        AnchorConfig {
            clusters: self.anchors.clusters,
            iterations: self.anchors.iterations,
        }
    }

    fn dealer_source(&self) -> Result<DealerSource> {
        Ok(match &self.dealer_files {
            Some([a, b]) => DealerSource::Bundles(Box::new(DealerBundle::load(a)?), Box::new(DealerBundle::load(b)?)),
            None => DealerSource::Stream(self.dealer_seed),
        })
    }
}

/// Everything the detection program produces, in one backend's domain.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgramOutput {
    /// Last tensor of every backbone stage.
    pub stages: Vec<(String, Vec<R>)>,
    pub boxes: BoxSet,
    pub class_probs: Vec<Vec<R>>,
    /// Anchor widths then heights.
    pub anchors: Vec<R>,
    pub kept: Vec<usize>,
    pub dealer_used: DealerCounts,
    /// Wall time per stage in milliseconds.
    pub timings: Vec<(String, f64)>,
}

/// Per-party inputs: image, sample widths and heights, initial centers.
pub struct ProgramInput {
    pub image: Vec<R>,
    pub samples: [Vec<R>; 2],
    pub init: [Vec<R>; 2],
}

/// Backbone, box prediction and suppression on any backend.
pub fn detection_program<B: Backend>(
    b: &mut B,
    model: &Model,
    cfg: &PipelineConfig,
    input: ProgramInput,
) -> Result<ProgramOutput> {
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut Vec<(String, f64)>| {
        timings.push((name.to_string(), clock.elapsed().as_secs_f64() * 1e3));
        clock = Instant::now();
    };
    let x = Tensor::new(model.backbone.input_shape(), input.image)?;
    let values = model.backbone.run_all(b, x)?;
    let stages: Vec<(String, Vec<R>)> = model
        .backbone
        .stage_outputs()
        .into_iter()
        .filter(|(s, _)| s != "input")
        .map(|(s, id)| (s, values[id].data.clone()))
        .collect();
    lap("backbone", &mut timings);
    let features = values.last().expect("graph has nodes");
    let pred = sec_bbpred(
        b,
        features,
        &model.head,
        (&input.samples[0], &input.samples[1]),
        (&input.init[0], &input.init[1]),
        &cfg.anchor_config(),
    )
    .map_err(|e| e.in_stage("bbpred"))?;
    lap("bbpred", &mut timings);
    let nms = sec_nms(b, &pred.boxes, cfg.eta).map_err(|e| e.in_stage("nms"))?;
    lap("nms", &mut timings);
    Ok(ProgramOutput {
        stages,
        boxes: pred.boxes,
        class_probs: pred.class_probs,
        anchors: [pred.anchors.widths, pred.anchors.heights].concat(),
        kept: nms.kept,
        dealer_used: DealerCounts::default(),
        timings,
    })
}

/// One detection after reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    /// Index of the predicted box (anchor-major, then row, then column).
    pub index: usize,
    /// `[x1, y1, x2, y2]` clamped to the image.
    pub bbox: [f64; 4],
    pub class: usize,
    /// Objectness times the best class probability.
    pub confidence: f64,
}

/// Plaintext view of a detection run.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub detections: Vec<DetectionResult>,
    pub stages: Vec<(String, Vec<f64>)>,
    /// Every predicted box before suppression, unclamped.
    pub boxes: Vec<[f64; 4]>,
    pub scores: Vec<f64>,
    pub class_probs: Vec<Vec<f64>>,
    pub anchors: Vec<f64>,
    pub kept: Vec<usize>,
}

fn encoded_inputs(image: &Image, cfg: &PipelineConfig, model: &Model) -> Result<Vec<Vec<R>>> {
    let codec = &cfg.codec;
    let t = image.to_tensor(model.backbone.input_shape(), codec)?;
    let col = |xs: &[[f64; 2]], i: usize| codec.encode_slice(&xs.iter().map(|s| s[i]).collect::<Vec<_>>());
    let init = cfg.anchors.initial_centers();
    Ok(vec![
        t.data,
        col(&cfg.anchors.samples, 0)?,
        col(&cfg.anchors.samples, 1)?,
        col(&init, 0)?,
        col(&init, 1)?,
    ])
}

fn program_input(mut v: Vec<Vec<R>>) -> ProgramInput {
    let ih = v.pop().unwrap();
    let iw = v.pop().unwrap();
    let sh = v.pop().unwrap();
    let sw = v.pop().unwrap();
    ProgramInput {
        image: v.pop().unwrap(),
        samples: [sw, sh],
        init: [iw, ih],
    }
}

fn decode_output(out: &ProgramOutput, codec: &FixedPointCodec, width: f64, height: f64) -> Inference {
    let [x1, y1, x2, y2, score] = out.boxes.columns();
    let (x1, y1, x2, y2) = (
        codec.decode_slice(&x1),
        codec.decode_slice(&y1),
        codec.decode_slice(&x2),
        codec.decode_slice(&y2),
    );
    let boxes: Vec<[f64; 4]> = (0..x1.len()).map(|i| [x1[i], y1[i], x2[i], y2[i]]).collect();
    let scores = codec.decode_slice(&score);
    let class_probs: Vec<Vec<f64>> = out.class_probs.iter().map(|c| codec.decode_slice(c)).collect();
    let detections = out
        .kept
        .iter()
        .map(|&i| {
            let (class, best) = argmax_class(&class_probs, i);
            let b = boxes[i];
            DetectionResult {
                index: i,
                bbox: [
                    b[0].clamp(0.0, width),
                    b[1].clamp(0.0, height),
                    b[2].clamp(0.0, width),
                    b[3].clamp(0.0, height),
                ],
                class,
                confidence: (scores[i].clamp(0.0, 1.0) * best.clamp(0.0, 1.0)).clamp(0.0, 1.0),
            }
        })
        .collect();
    Inference {
        detections,
        stages: out
            .stages
            .iter()
            .map(|(s, v)| (s.clone(), codec.decode_slice(v)))
            .collect(),
        boxes,
        scores,
        class_probs,
        anchors: codec.decode_slice(&out.anchors),
        kept: out.kept.clone(),
    }
}

fn input_extent(model: &Model) -> (f64, f64) {
    let [_, h, w] = model.backbone.input_shape();
    (w as f64, h as f64)
}

/// Plaintext fixed-point run of the same program.
pub fn oracle_infer(image: &Image, model: &Model, cfg: &PipelineConfig) -> Result<Inference> {
    let inputs = encoded_inputs(image, cfg, model)?;
    let out = detection_program(&mut Plain::new(cfg.codec), model, cfg, program_input(inputs))?;
    let (w, h) = input_extent(model);
    Ok(decode_output(&out, &cfg.codec, w, h))
}

/// Maximum absolute deviation of one stage from the oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageError {
    pub stage: String,
    pub max_abs: f64,
}

pub struct SecureReport {
    pub inference: Inference,
    pub transcript: SessionTranscript,
    /// Each party's shares of every stage output, as it held them.
    pub shares: [Vec<(String, Vec<R>)>; 2],
    pub dealer_used: DealerCounts,
    pub timings: Vec<(String, f64)>,
}

/// Shares the image and anchor samples, runs both parties and reconstructs.
pub fn secure_infer(image: &Image, model: &Model, cfg: &PipelineConfig) -> Result<SecureReport> {
    if cfg.engine != Engine::Beaver {
        return Err(Error::Config(
            "the two-party pipeline multiplies with Beaver triples; grr3 needs three online parties and is only benchmarked".into(),
        ));
    }
    let inputs = encoded_inputs(image, cfg, model)?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.share_seed);
    let (s1, s2): (Vec<_>, Vec<_>) = inputs.iter().map(|x| split_vec(x, &mut rng)).unzip();
    let (o1, o2, transcript) = run_two_party(&cfg.session(), cfg.dealer_source()?, (s1, s2), |p, x| {
        let mut out = detection_program(p, model, cfg, program_input(x))?;
        out.dealer_used = p.dealer().consumed();
        Ok(out)
    })?;
    if o1.kept != o2.kept {
        return Err(Error::Protocol("parties disagree on the kept boxes".into()));
    }
    let joined = |a: &[R], b: &[R]| reconstruct_vec(a, b);
    let [a1, b1, c1, d1, e1] = o1.boxes.columns();
    let [a2, b2, c2, d2, e2] = o2.boxes.columns();
    let combined = ProgramOutput {
        stages: o1
            .stages
            .iter()
            .zip(&o2.stages)
            .map(|((s, a), (_, b))| (s.clone(), joined(a, b)))
            .collect(),
        boxes: BoxSet::from_columns(
            &joined(&a1, &a2),
            &joined(&b1, &b2),
            &joined(&c1, &c2),
            &joined(&d1, &d2),
            &joined(&e1, &e2),
        )?,
        class_probs: o1
            .class_probs
            .iter()
            .zip(&o2.class_probs)
            .map(|(a, b)| joined(a, b))
            .collect(),
        anchors: joined(&o1.anchors, &o2.anchors),
        kept: o1.kept.clone(),
        dealer_used: o1.dealer_used,
        timings: o1.timings.clone(),
    };
    let (w, h) = input_extent(model);
    Ok(SecureReport {
        inference: decode_output(&combined, &cfg.codec, w, h),
        transcript,
        shares: [o1.stages, o2.stages],
        dealer_used: o1.dealer_used,
        timings: o1.timings,
    })
}

/// Per-stage maximum absolute error of `secure` against `oracle`, with
/// the decoded boxes and class probabilities as the last two stages.
pub fn stage_errors(secure: &Inference, oracle: &Inference) -> Vec<StageError> {
    let max_dev = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let mut out: Vec<StageError> = secure
        .stages
        .iter()
        .zip(&oracle.stages)
        .map(|((s, a), (_, b))| StageError {
            stage: s.clone(),
            max_abs: max_dev(a, b),
        })
        .collect();
    let flat = |b: &[[f64; 4]]| b.iter().flatten().copied().collect::<Vec<f64>>();
    out.push(StageError {
        stage: "boxes".into(),
        max_abs: max_dev(&flat(&secure.boxes), &flat(&oracle.boxes)),
    });
    out.push(StageError {
        stage: "class_probs".into(),
        max_abs: max_dev(&secure.class_probs.concat(), &oracle.class_probs.concat()),
    });
    out
}

/// Agreement of two runs over every predicted box, plus the overlap of
/// their kept sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub boxes: usize,
    pub class_equal: usize,
    /// Largest `|a - b| / max(|b|, 1)` over box coordinates.
    pub max_rel_dev: f64,
    pub kept_equal: bool,
    /// Jaccard index of the kept sets.
    pub kept_overlap: f64,
}

impl Agreement {
    pub fn class_rate(&self) -> f64 {
        if self.boxes == 0 {
            1.0
        } else {
            self.class_equal as f64 / self.boxes as f64
        }
    }
}

fn argmax_class(class_probs: &[Vec<f64>], i: usize) -> (usize, f64) {
    class_probs
        .iter()
        .enumerate()
        .map(|(c, p)| (c, p[i]))
        .fold(
            (0, f64::NEG_INFINITY),
            |acc, (c, p)| if p > acc.1 { (c, p) } else { acc },
        )
}

/// Compares `secure` against `oracle`.
pub fn compare(secure: &Inference, oracle: &Inference) -> Agreement {
    let boxes = secure.boxes.len().min(oracle.boxes.len());
    let class_equal = (0..boxes)
        .filter(|&i| argmax_class(&secure.class_probs, i).0 == argmax_class(&oracle.class_probs, i).0)
        .count();
    let max_rel_dev = secure
        .boxes
        .iter()
        .flatten()
        .zip(oracle.boxes.iter().flatten())
        .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
        .fold(0.0, f64::max);
    let both = secure.kept.iter().filter(|i| oracle.kept.contains(i)).count();
    let union = secure.kept.len() + oracle.kept.len() - both;
    Agreement {
        boxes,
        class_equal,
        max_rel_dev,
        kept_equal: secure.kept == oracle.kept,
        kept_overlap: if union == 0 { 1.0 } else { both as f64 / union as f64 },
    }
}

/// Compares two detection lists, matching detections by box index.
pub fn compare_detections(a: &[DetectionResult], b: &[DetectionResult]) -> Agreement {
    let mut boxes = 0;
    let mut class_equal = 0;
    let mut max_rel_dev: f64 = 0.0;
    for d in a {
        if let Some(o) = b.iter().find(|o| o.index == d.index) {
            boxes += 1;
            class_equal += (o.class == d.class) as usize;
            for (x, y) in d.bbox.iter().zip(&o.bbox) {
                max_rel_dev = max_rel_dev.max((x - y).abs() / y.abs().max(1.0));
            }
        }
    }
    let union = a.len() + b.len() - boxes;
    Agreement {
        boxes,
        class_equal,
        max_rel_dev,
        kept_equal: a.iter().map(|d| d.index).eq(b.iter().map(|d| d.index)),
        kept_overlap: if union == 0 { 1.0 } else { boxes as f64 / union as f64 },
    }
}

pub fn write_detections(path: &Path, dets: &[DetectionResult]) -> Result<()> {
    let mut text = String::new();
    for d in dets {
        text.push_str(&serde_json::to_string(d).expect("detection serializes"));
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_detections(path: &Path) -> Result<Vec<DetectionResult>> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

/// Dealer material one inference consumes, measured by a streamed run.
pub fn dealer_requirements(image: &Image, model: &Model, cfg: &PipelineConfig) -> Result<DealerCounts> {
    let streamed = PipelineConfig {
        dealer_files: None,
        ..cfg.clone()
    };
    Ok(secure_infer(image, model, &streamed)?.dealer_used)
}

/// Writes both parties' dealer bundles for `counts` and returns their paths.
pub fn dealer_serve(seed: u64, codec: FixedPointCodec, counts: DealerCounts, dir: &Path) -> Result<[PathBuf; 2]> {
    std::fs::create_dir_all(dir)?;
    let (b1, b2) = DealerGenerator::with_codec(seed, codec).bundles(counts);
    let paths = [dir.join("dealer_p1.bin"), dir.join("dealer_p2.bin")];
    b1.save(&paths[0])?;
    b2.save(&paths[1])?;
    Ok(paths)
}

/// Uniformity of the low byte of one party's shares of a stage output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareHistogram {
    pub stage: String,
    pub party: u8,
    pub samples: usize,
    pub p_value: f64,
}

pub fn share_histograms(shares: &[Vec<(String, Vec<R>)>; 2]) -> Vec<ShareHistogram> {
    shares
        .iter()
        .enumerate()
        .flat_map(|(party, stages)| {
            stages.iter().map(move |(stage, v)| {
                let bytes: Vec<u8> = v.iter().map(|x| x.value() as u8).collect();
                ShareHistogram {
                    stage: stage.clone(),
                    party: party as u8 + 1,
                    samples: v.len(),
                    p_value: crate::stats::chi_square_uniform_p(&crate::stats::byte_histogram(&bytes)),
                }
            })
        })
        .collect()
}

/// Correlation of one party's shares with the oracle feature maps, beside
/// the correlation of a random pairing of those maps with themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyCheck {
    pub stage: String,
    pub party: u8,
    pub share_corr: f64,
    pub baseline_corr: f64,
    /// `4 / sqrt(n)`.
    pub bound: f64,
}

impl PrivacyCheck {
    pub fn passes(&self) -> bool {
        self.share_corr.abs() < self.bound && self.baseline_corr.abs() < self.bound
    }
}

/// Shares are read through their low 32 bits.
pub fn privacy_checks(shares: &[Vec<(String, Vec<R>)>; 2], oracle: &Inference, seed: u64) -> Vec<PrivacyCheck> {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (party, stages) in shares.iter().enumerate() {
        for ((stage, v), (_, truth)) in stages.iter().zip(&oracle.stages) {
            let low: Vec<f64> = v.iter().map(|x| x.value() as u32 as f64).collect();
            let mut paired = truth.clone();
            paired.shuffle(&mut rng);
            out.push(PrivacyCheck {
                stage: stage.clone(),
                party: party as u8 + 1,
                share_corr: crate::stats::pearson(&low, truth),
                baseline_corr: crate::stats::pearson(&paired, truth),
                bound: 4.0 / (truth.len() as f64).sqrt(),
            });
        }
    }
    out
}

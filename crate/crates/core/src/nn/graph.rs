//! Layer graphs: CBS, E-ELAN, MP and SPPCSPC blocks as ordered nodes with
//! channel concatenation.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{BNParams, Backend, CbsMode, ConvParams, Tensor};
use crate::error::{Error, Result};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Op {
    Input,
    Conv(ConvParams),
    Bn(BNParams),
    Silu,
    Sigmoid,
    MaxPool { size: usize, stride: usize, pad: usize },
    Concat,
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Conv(_) => "conv",
            Op::Bn(_) => "bn",
            Op::Silu => "silu",
            Op::Sigmoid => "sigmoid",
            Op::MaxPool { .. } => "maxpool",
            Op::Concat => "concat",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub op: Op,
    pub inputs: Vec<NodeId>,
    pub shape: [usize; 3],
    /// Block the node belongs to, e.g. `eelan`.
    pub stage: String,
}

/// Nodes in topological order; node 0 is the input, the last node the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockGraph {
    pub nodes: Vec<Node>,
}

fn infer_shape(op: &Op, inputs: &[[usize; 3]]) -> Result<[usize; 3]> {
    let single = || -> Result<[usize; 3]> {
        match inputs {
            [s] => Ok(*s),
            _ => Err(Error::Shape(format!(
                "{} takes one input, got {}",
                op.kind(),
                inputs.len()
            ))),
        }
    };
    match op {
        Op::Input => Err(Error::Shape("input node inside the graph body".into())),
        Op::Conv(p) => p.output_shape(single()?),
        Op::Bn(p) => {
            let s = single()?;
            p.validate()?;
            if p.channels() != s[0] {
                return Err(Error::Shape(format!(
                    "batch norm over {} channels applied to {:?}",
                    p.channels(),
                    s
                )));
            }
            Ok(s)
        }
        Op::Silu | Op::Sigmoid => single(),
        Op::MaxPool { size, stride, pad } => {
            let [c, h, w] = single()?;
            if *size == 0 || *stride == 0 || h + 2 * pad < *size || w + 2 * pad < *size {
                return Err(Error::Shape(format!("pool {size}/{stride} does not fit {h}x{w}")));
            }
            Ok([c, (h + 2 * pad - size) / stride + 1, (w + 2 * pad - size) / stride + 1])
        }
        Op::Concat => {
            let first = inputs.first().ok_or_else(|| Error::Shape("empty concat".into()))?;
            if inputs.iter().any(|s| s[1..] != first[1..]) {
                return Err(Error::Shape(format!("cannot concatenate {inputs:?}")));
            }
            Ok([inputs.iter().map(|s| s[0]).sum(), first[1], first[2]])
        }
    }
}

impl BlockGraph {
    pub fn input_shape(&self) -> [usize; 3] {
        self.nodes[0].shape
    }

    pub fn output_shape(&self) -> [usize; 3] {
        self.nodes.last().expect("graph has an input node").shape
    }

    /// Checks ordering and recomputes every shape.
    pub fn validate(&self) -> Result<()> {
        match self.nodes.first() {
            Some(n) if n.op == Op::Input && n.inputs.is_empty() => {}
            _ => return Err(Error::Shape("graph must start with one input node".into())),
        }
        for (i, node) in self.nodes.iter().enumerate().skip(1) {
            if node.inputs.is_empty() || node.inputs.iter().any(|&j| j >= i) {
                return Err(Error::Shape(format!("node {i} has inputs {:?}", node.inputs)));
            }
            let shapes: Vec<[usize; 3]> = node.inputs.iter().map(|&j| self.nodes[j].shape).collect();
            let s = infer_shape(&node.op, &shapes)?;
            if s != node.shape {
                return Err(Error::Shape(format!(
                    "node {i} declares {:?}, computes {s:?}",
                    node.shape
                )));
            }
        }
        Ok(())
    }

    pub fn run<B: Backend>(&self, b: &mut B, x: Tensor) -> Result<Tensor> {
        Ok(self.run_all(b, x)?.pop().expect("graph has an input node"))
    }

    /// Output of every node, in node order.
    pub fn run_all<B: Backend>(&self, b: &mut B, x: Tensor) -> Result<Vec<Tensor>> {
        if x.shape != self.input_shape() {
            return Err(Error::Shape(format!(
                "graph expects {:?}, got {:?}",
                self.input_shape(),
                x.shape
            )));
        }
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        values.push(x);
        let mut fused: HashMap<NodeId, Tensor> = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate().skip(1) {
            let arg = &values[node.inputs[0]];
            let norm = match &node.op {
                Op::Conv(_) => self.nodes[i + 1..]
                    .iter()
                    .position(|n| n.inputs == [i] && matches!(n.op, Op::Bn(_)))
                    .map(|j| i + 1 + j),
                _ => None,
            };
            let out = b
                .scoped(stage_scope(&node.stage), |b| {
                    Ok(match (&node.op, norm) {
                        (Op::Input, _) => unreachable!("validated"),
                        (Op::Conv(p), Some(j)) => {
                            let Op::Bn(q) = &self.nodes[j].op else { unreachable!() };
                            let (out, normed) = b.conv_bn(arg, p, q)?;
                            fused.insert(j, normed);
                            out
                        }
                        (Op::Conv(p), None) => b.conv(arg, p)?,
                        (Op::Bn(p), _) => match fused.remove(&i) {
                            Some(t) => t,
                            None => b.bn(arg, p)?,
                        },
                        (Op::Silu, _) => arg.with_data(b.silu(&arg.data)?),
                        (Op::Sigmoid, _) => arg.with_data(b.sigmoid(&arg.data)?),
                        (Op::MaxPool { size, stride, pad }, _) => b.maxpool(arg, *size, *stride, *pad)?,
                        (Op::Concat, _) => {
                            let parts: Vec<&Tensor> = node.inputs.iter().map(|&j| &values[j]).collect();
                            Tensor::concat(&parts)?
                        }
                    })
                })
                .map_err(|e| e.in_stage(node.stage.as_str()))?;
            values.push(out);
        }
        Ok(values)
    }

    /// Last node of each stage, in order of appearance.
    pub fn stage_outputs(&self) -> Vec<(String, NodeId)> {
        let mut out: Vec<(String, NodeId)> = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            match out.last_mut() {
                Some((s, id)) if *s == node.stage => *id = i,
                _ => out.push((node.stage.clone(), i)),
            }
        }
        out
    }
}

/// Transcript scope for a stage name; unknown stages share one scope.
pub fn stage_scope(stage: &str) -> &'static str {
    match stage {
        "input" => "input",
        "cbs" => "cbs",
        "eelan" => "eelan",
        "mp" => "mp",
        "sppcspc" => "sppcspc",
        "head" => "head",
        _ => "backbone",
    }
}

/// Rounds to the weight grid so parameters survive a file round trip.
fn quantize(x: f64) -> f64 {
    (x * 2f64.powi(32)).round() / 2f64.powi(32)
}

/// Builds graphs with seeded random parameters.
pub struct GraphBuilder {
    rng: ChaCha20Rng,
    nodes: Vec<Node>,
    stage: String,
}

impl GraphBuilder {
    pub fn new(input_shape: [usize; 3], seed: u64) -> Self {
        GraphBuilder {
            rng: ChaCha20Rng::seed_from_u64(seed),
            nodes: vec![Node {
                op: Op::Input,
                inputs: vec![],
                shape: input_shape,
                stage: "input".into(),
            }],
            stage: "input".into(),
        }
    }

    pub fn input(&self) -> NodeId {
        0
    }

    pub fn shape(&self, id: NodeId) -> [usize; 3] {
        self.nodes[id].shape
    }

    pub fn set_stage(&mut self, name: &str) {
        self.stage = name.to_string();
    }

    pub fn push(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        if inputs.iter().any(|&j| j >= self.nodes.len()) {
            return Err(Error::Shape(format!("unknown input among {inputs:?}")));
        }
        let shapes: Vec<[usize; 3]> = inputs.iter().map(|&j| self.nodes[j].shape).collect();
        let shape = infer_shape(&op, &shapes)?;
        self.nodes.push(Node {
            op,
            inputs: inputs.to_vec(),
            shape,
            stage: self.stage.clone(),
        });
        Ok(self.nodes.len() - 1)
    }

    pub fn random_conv(&mut self, in_channels: usize, out_channels: usize, mode: CbsMode) -> Result<ConvParams> {
        let k = mode.kernel();
        let bound = (3.0 / (in_channels * k * k) as f64).sqrt();
        let weights = (0..out_channels * in_channels * k * k)
            .map(|_| quantize(self.rng.gen_range(-bound..bound)))
            .collect();
        let bias = (0..out_channels)
            .map(|_| quantize(self.rng.gen_range(-0.1..0.1)))
            .collect();
        ConvParams::new(out_channels, in_channels, k, mode.stride(), weights, bias)
    }

    pub fn random_bn(&mut self, channels: usize) -> BNParams {
        let mut draw =
            |lo: f64, hi: f64| -> Vec<f64> { (0..channels).map(|_| quantize(self.rng.gen_range(lo..hi))).collect() };
        let gamma = draw(0.5, 1.5);
        let beta = draw(-0.5, 0.5);
        let mean = draw(-0.2, 0.2);
        let var = draw(0.5, 1.5);
        BNParams {
            mean,
            var,
            gamma,
            beta,
            eps: quantize(1e-5),
        }
    }

    pub fn conv(&mut self, x: NodeId, out_channels: usize, mode: CbsMode) -> Result<NodeId> {
        let p = self.random_conv(self.shape(x)[0], out_channels, mode)?;
        self.push(Op::Conv(p), &[x])
    }

    pub fn bn(&mut self, x: NodeId) -> Result<NodeId> {
        let p = self.random_bn(self.shape(x)[0]);
        self.push(Op::Bn(p), &[x])
    }

    pub fn silu(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::Silu, &[x])
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::Sigmoid, &[x])
    }

    pub fn maxpool(&mut self, x: NodeId, size: usize, stride: usize, pad: usize) -> Result<NodeId> {
        self.push(Op::MaxPool { size, stride, pad }, &[x])
    }

    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        self.push(Op::Concat, xs)
    }

    /// Convolution, batch norm, SiLU.
    pub fn cbs(&mut self, x: NodeId, out_channels: usize, mode: CbsMode) -> Result<NodeId> {
        let c = self.conv(x, out_channels, mode)?;
        let b = self.bn(c)?;
        self.silu(b)
    }

    /// Three lines of `width` channels each: CBS1; CBS1 then CBS2 twice;
    /// CBS1 then CBS2 four times.
    pub fn eelan(&mut self, x: NodeId, width: usize) -> Result<NodeId> {
        let line1 = self.cbs(x, width, CbsMode::Cbs1)?;
        let mut line2 = self.cbs(x, width, CbsMode::Cbs1)?;
        for _ in 0..2 {
            line2 = self.cbs(line2, width, CbsMode::Cbs2)?;
        }
        let mut line3 = self.cbs(x, width, CbsMode::Cbs1)?;
        for _ in 0..4 {
            line3 = self.cbs(line3, width, CbsMode::Cbs2)?;
        }
        self.concat(&[line1, line2, line3])
    }

    /// Downsampling: 2x2 max pool then CBS1, beside CBS1 then CBS3.
    pub fn mp_block(&mut self, x: NodeId, half: usize) -> Result<NodeId> {
        let pooled = self.maxpool(x, 2, 2, 0)?;
        let a = self.cbs(pooled, half, CbsMode::Cbs1)?;
        let b = self.cbs(x, half, CbsMode::Cbs1)?;
        let b = self.cbs(b, half, CbsMode::Cbs3)?;
        self.concat(&[a, b])
    }

    /// Conv, same-size max pool (5, 9, 13), conv per line; lines concatenated.
    pub fn sppcspc(&mut self, x: NodeId, width: usize) -> Result<NodeId> {
        let mut lines = Vec::with_capacity(3);
        for size in [5, 9, 13] {
            let a = self.conv(x, width, CbsMode::Cbs1)?;
            let p = self.maxpool(a, size, 1, size / 2)?;
            lines.push(self.conv(p, width, CbsMode::Cbs1)?);
        }
        self.concat(&lines)
    }

    pub fn finish(self) -> BlockGraph {
        BlockGraph { nodes: self.nodes }
    }
}

pub fn build_cbs(input: [usize; 3], out_channels: usize, mode: CbsMode, seed: u64) -> Result<BlockGraph> {
    let mut g = GraphBuilder::new(input, seed);
    g.set_stage("cbs");
    g.cbs(0, out_channels, mode)?;
    Ok(g.finish())
}

pub fn build_eelan(input: [usize; 3], width: usize, seed: u64) -> Result<BlockGraph> {
    let mut g = GraphBuilder::new(input, seed);
    g.set_stage("eelan");
    g.eelan(0, width)?;
    Ok(g.finish())
}

pub fn build_sppcspc(input: [usize; 3], width: usize, seed: u64) -> Result<BlockGraph> {
    let mut g = GraphBuilder::new(input, seed);
    g.set_stage("sppcspc");
    g.sppcspc(0, width)?;
    Ok(g.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixed::FixedPointCodec;
    use crate::nn::Plain;
    use crate::ring::RingElement;

    #[test]
    fn cbs_shapes() {
        let g = build_cbs([3, 16, 16], 8, CbsMode::Cbs1, 1).unwrap();
        assert_eq!(g.output_shape(), [8, 16, 16]);
        let g = build_cbs([3, 16, 16], 8, CbsMode::Cbs3, 1).unwrap();
        assert_eq!(g.output_shape(), [8, 8, 8]);
        g.validate().unwrap();
    }

    #[test]
    fn eelan_channels_sum_lines() {
        let g = build_eelan([6, 8, 8], 4, 2).unwrap();
        assert_eq!(g.output_shape(), [12, 8, 8]);
        let g = build_sppcspc([12, 8, 8], 4, 3).unwrap();
        assert_eq!(g.output_shape(), [12, 8, 8]);
    }

    #[test]
    fn mismatched_channels_rejected() {
        let mut g = GraphBuilder::new([3, 8, 8], 0);
        let p = ConvParams::new(4, 5, 1, 1, vec![0.0; 20], vec![0.0; 4]).unwrap();
        assert!(matches!(g.push(Op::Conv(p), &[0]), Err(Error::Shape(_))));
        assert!(g.push(Op::Bn(BNParams::identity(4)), &[0]).is_err());
    }

    #[test]
    fn validate_catches_bad_order() {
        let mut g = build_cbs([2, 4, 4], 2, CbsMode::Cbs1, 0).unwrap();
        g.nodes[1].inputs = vec![2];
        assert!(g.validate().is_err());
    }

    #[test]
    fn plain_run_and_stages() {
        let mut b = GraphBuilder::new([2, 8, 8], 5);
        b.set_stage("stem");
        let x = b.cbs(0, 4, CbsMode::Cbs3).unwrap();
        b.set_stage("mp");
        b.mp_block(x, 2).unwrap();
        let g = b.finish();
        assert_eq!(g.output_shape(), [4, 2, 2]);
        let stages: Vec<String> = g.stage_outputs().into_iter().map(|s| s.0).collect();
        assert_eq!(stages, ["input", "stem", "mp"]);
        let codec = FixedPointCodec::default();
        let input = Tensor::new(
            [2, 8, 8],
            (0..128).map(|i| codec.encode(i as f64 / 64.0).unwrap()).collect(),
        )
        .unwrap();
        let out = g.run(&mut Plain::new(codec), input).unwrap();
        assert_eq!(out.shape, [4, 2, 2]);
        assert!(out.data.iter().any(|&v| v != RingElement::ZERO));
    }
}

//! Model parameters and their binary file format.
//!
//! Layout (little endian): magic `PPWT`, version `u16`, node count `u32`,
//! then per node the kind byte, stage name, input ids, shape and
//! parameters, then the head. Real parameters are stored as `i64` at scale
//! `2^32`, the grid the secure path encodes weights on.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detect::HeadParams;
use crate::error::{Error, Result};
use crate::nn::graph::Node;
use crate::nn::{BNParams, BlockGraph, CbsMode, ConvParams, GraphBuilder, Op};

const MAGIC: &[u8; 4] = b"PPWT";
const VERSION: u16 = 1;
const SCALE: f64 = 4_294_967_296.0;

/// Widths of the desk-scale network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    /// `[channels, height, width]` of the input image.
    pub input: [usize; 3],
    /// Output channels of the two stride-2 CBS blocks.
    pub stem: [usize; 2],
    pub eelan_width: usize,
    pub mp_half: usize,
    pub spp_width: usize,
    pub classes: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input: [1, 64, 64],
            stem: [8, 16],
            eelan_width: 4,
            mp_half: 6,
            spp_width: 4,
            classes: 2,
        }
    }
}

/// Backbone graph plus prediction head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub backbone: BlockGraph,
    pub head: HeadParams,
}

impl Model {
    /// CBS, CBS, E-ELAN, MP, SPPCSPC and a 1x1 head, seeded.
    pub fn random(net: &NetworkConfig, anchors: usize, seed: u64) -> Result<Model> {
        let [_, h, w] = net.input;
        if h != w || h % 8 != 0 {
            return Err(Error::Config(format!(
                "input must be square with a side divisible by 8, got {h}x{w}"
            )));
        }
        let mut g = GraphBuilder::new(net.input, seed);
        g.set_stage("cbs");
        let x = g.cbs(g.input(), net.stem[0], CbsMode::Cbs3)?;
        let x = g.cbs(x, net.stem[1], CbsMode::Cbs3)?;
        g.set_stage("eelan");
        let x = g.eelan(x, net.eelan_width)?;
        g.set_stage("mp");
        let x = g.mp_block(x, net.mp_half)?;
        g.set_stage("sppcspc");
        let x = g.sppcspc(x, net.spp_width)?;
        let [c, gh, _] = g.shape(x);
        let out = anchors * (5 + net.classes);
        let conv = g.random_conv(c, out, CbsMode::Cbs1)?;
        let bn = g.random_bn(out);
        Ok(Model {
            backbone: g.finish(),
            head: HeadParams {
                conv,
                bn,
                anchors,
                classes: net.classes,
                stride: h / gh,
            },
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.head.validate(self.backbone.output_shape())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u16(VERSION);
        w.u32(self.backbone.nodes.len() as u32);
        for node in &self.backbone.nodes {
            let kind = match &node.op {
                Op::Input => 0u8,
                Op::Conv(_) => 1,
                Op::Bn(_) => 2,
                Op::Silu => 3,
                Op::Sigmoid => 4,
                Op::MaxPool { .. } => 5,
                Op::Concat => 6,
            };
            w.0.push(kind);
            w.str(&node.stage);
            w.u32(node.inputs.len() as u32);
            for &i in &node.inputs {
                w.u32(i as u32);
            }
            for s in node.shape {
                w.u32(s as u32);
            }
            match &node.op {
                Op::Conv(p) => w.conv(p),
                Op::Bn(p) => w.bn(p),
                Op::MaxPool { size, stride, pad } => {
                    w.u32(*size as u32);
                    w.u32(*stride as u32);
                    w.u32(*pad as u32);
                }
                _ => {}
            }
        }
        w.conv(&self.head.conv);
        w.bn(&self.head.bn);
        w.u32(self.head.anchors as u32);
        w.u32(self.head.classes as u32);
        w.u32(self.head.stride as u32);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a weights file (bad magic)".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported weights version {version}")));
        }
        let count = r.u32()? as usize;
        let mut nodes = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let kind = r.take(1)?[0];
            let stage = r.str()?;
            let n_in = r.u32()? as usize;
            let inputs = (0..n_in)
                .map(|_| r.u32().map(|v| v as usize))
                .collect::<Result<Vec<_>>>()?;
            let shape = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
            let op = match kind {
                0 => Op::Input,
                1 => Op::Conv(r.conv()?),
                2 => Op::Bn(r.bn()?),
                3 => Op::Silu,
                4 => Op::Sigmoid,
                5 => Op::MaxPool {
                    size: r.u32()? as usize,
                    stride: r.u32()? as usize,
                    pad: r.u32()? as usize,
                },
                6 => Op::Concat,
                k => return Err(Error::Format(format!("unknown layer kind {k}"))),
            };
            nodes.push(Node {
                op,
                inputs,
                shape,
                stage,
            });
        }
        let conv = r.conv()?;
        let bn = r.bn()?;
        let head = HeadParams {
            conv,
            bn,
            anchors: r.u32()? as usize,
            classes: r.u32()? as usize,
            stride: r.u32()? as usize,
        };
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes in weights file",
                bytes.len() - r.pos
            )));
        }
        let model = Model {
            backbone: BlockGraph { nodes },
            head,
        };
        model
            .validate()
            .map_err(|e| Error::Format(format!("inconsistent weights file: {e}")))?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Model> {
        Model::from_bytes(&std::fs::read(path)?)
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn real(&mut self, v: f64) {
        self.0.extend_from_slice(&((v * SCALE).round() as i64).to_le_bytes());
    }

    fn reals(&mut self, vs: &[f64]) {
        self.u32(vs.len() as u32);
        vs.iter().for_each(|&v| self.real(v));
    }

    fn str(&mut self, s: &str) {
        self.u16(s.len() as u16);
        self.0.extend_from_slice(s.as_bytes());
    }

    fn conv(&mut self, p: &ConvParams) {
        for v in [p.out_channels, p.in_channels, p.kernel, p.stride] {
            self.u32(v as u32);
        }
        self.reals(&p.weights);
        self.reals(&p.bias);
    }

    fn bn(&mut self, p: &BNParams) {
        for v in [&p.mean, &p.var, &p.gamma, &p.beta] {
            self.reals(v);
        }
        self.real(p.eps);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("weights file is truncated".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn real(&mut self) -> Result<f64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()) as f64 / SCALE)
    }

    fn reals(&mut self) -> Result<Vec<f64>> {
        let n = self.u32()? as usize;
        if n > self.buf.len() / 8 {
            return Err(Error::Format("parameter count exceeds file size".into()));
        }
        (0..n).map(|_| self.real()).collect()
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("stage name is not UTF-8".into()))
    }

    fn conv(&mut self) -> Result<ConvParams> {
        let (o, i, k, s) = (self.u32()?, self.u32()?, self.u32()?, self.u32()?);
        let weights = self.reals()?;
        let bias = self.reals()?;
        ConvParams::new(o as usize, i as usize, k as usize, s as usize, weights, bias)
            .map_err(|e| Error::Format(format!("bad convolution: {e}")))
    }

    fn bn(&mut self) -> Result<BNParams> {
        Ok(BNParams {
            mean: self.reals()?,
            var: self.reals()?,
            gamma: self.reals()?,
            beta: self.reals()?,
            eps: self.real()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_model_shapes() {
        let m = Model::random(&NetworkConfig::default(), 3, 1).unwrap();
        assert_eq!(m.backbone.output_shape(), [12, 8, 8]);
        assert_eq!(m.head.stride, 8);
        assert_eq!(m.head.conv.out_channels, 21);
        let stages: Vec<String> = m.backbone.stage_outputs().into_iter().map(|s| s.0).collect();
        assert_eq!(stages, ["input", "cbs", "eelan", "mp", "sppcspc"]);
    }

    #[test]
    fn file_round_trip_is_exact() {
        let m = Model::random(&NetworkConfig::default(), 3, 2).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..4], b"PPWT");
        assert_eq!(Model::from_bytes(&bytes).unwrap(), m);
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = Model::random(&NetworkConfig::default(), 1, 3).unwrap().to_bytes();
        assert!(matches!(
            Model::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Format(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Model::from_bytes(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(Model::from_bytes(&long).is_err());
    }
}

//! Binary model files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "TSDA" | version u16 | kind u8 (0 teacher, 1 student)
//! architecture: u32 length + JSON
//! shape table:  u32 count, then per block: u16 name length + name, frozen u8, u8 rank + u32 dims
//! norm:         u32 dim + dim f64 means + dim f64 stds
//! platt:        a f64, b f64
//! payload:      u64 count + f64 values in shape-table order
//! checksum:     u64, the first eight bytes of SHA-256 over everything before it
//! ```
//!
//! A student stores its frozen head as blocks flagged frozen; on load they
//! become the shared, non-trainable head again.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tsda::adaptation::{PlattParams, PretrainedTeacher, TrainedModel};
use tsda::neural::{BiLstm, Cnn, Conv1d, ConvSpec, Linear, Mlp, Parameters};
use tsda::{FeatureNorm, StudentModel, TeacherModel};

use crate::error::{CliError, Result};
use crate::fsio;

pub const MAGIC: &[u8; 4] = b"TSDA";
pub const FORMAT_VERSION: u16 = 1;

const KIND_TEACHER: u8 = 0;
const KIND_STUDENT: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub model: TrainedModel<f64>,
    /// Input normalization; a student uses its teacher's.
    pub norm: FeatureNorm,
    pub platt: PlattParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Architecture {
    tail: Vec<usize>,
    lstm_hidden: usize,
    head: Vec<usize>,
    conv: Option<Vec<ConvSpec>>,
}

#[derive(Debug, Clone, PartialEq)]
struct BlockShape {
    name: String,
    frozen: bool,
    dims: Vec<usize>,
}

impl ModelArtifact {
    pub fn teacher(t: &PretrainedTeacher<f64>) -> Self {
        Self {
            model: TrainedModel::Teacher(t.model.clone()),
            norm: t.model.norm.clone(),
            platt: t.platt,
        }
    }

    pub fn student(s: &StudentModel, teacher: &PretrainedTeacher<f64>) -> Self {
        Self {
            model: TrainedModel::Student(s.clone()),
            norm: teacher.model.norm.clone(),
            platt: teacher.platt,
        }
    }

    fn architecture(&self) -> Architecture {
        match &self.model {
            TrainedModel::Teacher(t) => Architecture {
                tail: t.tail.sizes(),
                lstm_hidden: t.body.hidden(),
                head: t.head.sizes(),
                conv: None,
            },
            TrainedModel::Student(s) => Architecture {
                tail: s.tail.sizes(),
                lstm_hidden: s.body.hidden(),
                head: s.head().sizes(),
                conv: s.aux.as_ref().map(|a| {
                    a.convs
                        .iter()
                        .map(|c| ConvSpec {
                            channels: c.out_ch,
                            kernel: c.kernel,
                            stride: c.stride,
                        })
                        .collect()
                }),
            },
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let (kind, shapes, values) = match &self.model {
            TrainedModel::Teacher(t) => (KIND_TEACHER, table(t, false), t.flatten()),
            TrainedModel::Student(s) => {
                let mut shapes = table(s, false);
                shapes.extend(head_table(s.head()));
                let mut values = s.flatten();
                values.extend(s.head().flatten());
                (KIND_STUDENT, shapes, values)
            }
        };
        buf.push(kind);
        let arch = serde_json::to_vec(&self.architecture()).expect("architecture serializes");
        put_u32(&mut buf, arch.len());
        buf.extend_from_slice(&arch);
        put_u32(&mut buf, shapes.len());
        for s in &shapes {
            buf.extend_from_slice(&(s.name.len() as u16).to_le_bytes());
            buf.extend_from_slice(s.name.as_bytes());
            buf.push(u8::from(s.frozen));
            buf.push(s.dims.len() as u8);
            for &d in &s.dims {
                put_u32(&mut buf, d);
            }
        }
        put_u32(&mut buf, self.norm.dim());
        put_f64s(&mut buf, &self.norm.mean);
        put_f64s(&mut buf, &self.norm.std);
        put_f64s(&mut buf, &[self.platt.a, self.platt.b]);
        buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
        put_f64s(&mut buf, &values);
        let sum = checksum(&buf);
        buf.extend_from_slice(&sum.to_le_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 2 || &bytes[..4] != MAGIC {
            return Err(CliError::Corruption(
                "not a model artifact (bad magic)".into(),
            ));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(CliError::Version {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        if bytes.len() < 6 + 1 + 8 {
            return Err(CliError::Corruption("file truncated".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("eight bytes"));
        if stored != checksum(body) {
            return Err(CliError::Corruption(
                "checksum mismatch (truncated or modified file)".into(),
            ));
        }
        let mut r = Reader {
            bytes: body,
            pos: 6,
        };
        let kind = r.u8()?;
        let arch_len = r.u32()?;
        let arch: Architecture = serde_json::from_slice(r.take(arch_len)?)
            .map_err(|e| CliError::Corruption(format!("architecture: {e}")))?;
        let n_blocks = r.u32()?;
        let mut shapes = Vec::with_capacity(n_blocks.min(1024));
        for _ in 0..n_blocks {
            let len = r.u16()?;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| CliError::Corruption("block name".into()))?;
            let frozen = r.u8()? != 0;
            let rank = r.u8()?;
            let dims = (0..rank).map(|_| r.u32()).collect::<Result<_>>()?;
            shapes.push(BlockShape { name, frozen, dims });
        }
        let dim = r.u32()?;
        let norm = FeatureNorm {
            mean: r.f64s(dim)?,
            std: r.f64s(dim)?,
        };
        let ab = r.f64s(2)?;
        let platt = PlattParams { a: ab[0], b: ab[1] };
        let count =
            usize::try_from(r.u64()?).map_err(|_| CliError::Corruption("payload size".into()))?;
        let values = r.f64s(count)?;
        if r.pos != body.len() {
            return Err(CliError::Corruption(
                "trailing bytes before checksum".into(),
            ));
        }
        let model = rebuild(kind, &arch, &norm, &shapes, &values)?;
        Ok(Self { model, norm, platt })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsio::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fsio::read(path)?)
    }

    /// Teacher view of a teacher artifact.
    pub fn into_pretrained(self) -> Result<PretrainedTeacher<f64>> {
        match self.model {
            TrainedModel::Teacher(model) => Ok(PretrainedTeacher {
                model,
                platt: self.platt,
                curve: Default::default(),
            }),
            TrainedModel::Student(_) => Err(CliError::Data(
                "expected a teacher artifact, found a student".into(),
            )),
        }
    }
}

fn table<P: Parameters<f64>>(p: &P, frozen: bool) -> Vec<BlockShape> {
    p.views()
        .into_iter()
        .map(|v| BlockShape {
            name: v.name,
            frozen,
            dims: v.shape,
        })
        .collect()
}

fn head_table(head: &Mlp<f64>) -> Vec<BlockShape> {
    table(head, true)
        .into_iter()
        .map(|b| BlockShape {
            name: format!("head.{}", b.name),
            ..b
        })
        .collect()
}

fn zero_mlp(sizes: &[usize]) -> Result<Mlp<f64>> {
    Ok(Mlp::from_layers(
        sizes
            .windows(2)
            .map(|w| Linear::zeros(w[0], w[1]))
            .collect(),
    )?)
}

fn zero_cnn(specs: &[ConvSpec], proj_dim: usize) -> Result<Cnn<f64>> {
    let mut in_ch = 1;
    let mut convs = Vec::with_capacity(specs.len());
    for s in specs {
        convs.push(Conv1d::zeros(in_ch, s.channels, s.kernel, s.stride));
        in_ch = s.channels;
    }
    Ok(Cnn::from_parts(convs, Linear::zeros(in_ch, proj_dim))?)
}

fn fill<P: Parameters<f64>>(p: &mut P, values: &mut &[f64]) {
    for block in p.blocks_mut() {
        let (head, rest) = values.split_at(block.len());
        block.copy_from_slice(head);
        *values = rest;
    }
}

/// Builds a zeroed model from the architecture, checks it against the shape
/// table and payload, then fills it.
fn rebuild(
    kind: u8,
    arch: &Architecture,
    norm: &FeatureNorm,
    shapes: &[BlockShape],
    values: &[f64],
) -> Result<TrainedModel<f64>> {
    let bad = |m: &str| CliError::Corruption(m.to_string());
    if arch.tail.len() < 2 || arch.lstm_hidden == 0 || arch.head.len() < 2 {
        return Err(bad("architecture is degenerate"));
    }
    if norm.dim() != arch.tail[0] || norm.std.len() != norm.mean.len() {
        return Err(bad("normalization does not match the input width"));
    }
    let tail = zero_mlp(&arch.tail).map_err(|_| bad("tail sizes"))?;
    let body = BiLstm::zeros(tail.out_dim(), arch.lstm_hidden);
    let mut head = zero_mlp(&arch.head).map_err(|_| bad("head sizes"))?;
    let check = |expected: Vec<BlockShape>| -> Result<()> {
        if expected != shapes {
            return Err(bad("shape table does not match the architecture"));
        }
        let n: usize = expected
            .iter()
            .map(|b| b.dims.iter().product::<usize>())
            .sum();
        if n != values.len() {
            return Err(bad("payload length does not match the shape table"));
        }
        Ok(())
    };
    let mut rest = values;
    match kind {
        KIND_TEACHER => {
            if arch.conv.is_some() {
                return Err(bad("teacher with a CNN branch"));
            }
            let mut t = TeacherModel::from_parts(tail, body, head, norm.clone())
                .map_err(|_| bad("teacher parts"))?;
            check(table(&t, false))?;
            fill(&mut t, &mut rest);
            Ok(TrainedModel::Teacher(t))
        }
        KIND_STUDENT => {
            let aux = arch
                .conv
                .as_deref()
                .map(|c| zero_cnn(c, tail.out_dim()))
                .transpose()
                .map_err(|_| bad("conv specs"))?;
            let mut s = StudentModel::from_parts(tail, body, aux, Arc::new(head.clone()))
                .map_err(|_| bad("student parts"))?;
            let mut expected = table(&s, false);
            expected.extend(head_table(&head));
            check(expected)?;
            fill(&mut s, &mut rest);
            fill(&mut head, &mut rest);
            let s = StudentModel::from_parts(s.tail, s.body, s.aux, Arc::new(head))
                .map_err(|_| bad("student parts"))?;
            Ok(TrainedModel::Student(s))
        }
        k => Err(CliError::Corruption(format!("unknown model kind {k}"))),
    }
}

fn checksum(bytes: &[u8]) -> u64 {
    let d = Sha256::digest(bytes);
    u64::from_le_bytes(d[..8].try_into().expect("eight bytes"))
}

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

fn put_f64s(buf: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CliError::Corruption("unexpected end of data".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<usize> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("two bytes")).into())
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("eight bytes"),
        ))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| CliError::Corruption("payload size".into()))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
            .collect())
    }
}

//! Binary checkpoints: an ASCII `DFCCKPT 1` header, named tensors as
//! `name rows cols` lines followed by row-major little-endian f64 payload,
//! and a trailing SHA-256 line over all preceding bytes. Reloading
//! reproduces parameters bit for bit.

use crate::error::{Error, Result};
use crate::network::{ActivationKind, Layer, NetworkParams};
use crate::numerics::Matrix;
use crate::plasticity::AdamMoments;
use sha2::{Digest, Sha256};
use std::fs;
use std::path::Path;

const MAGIC: &str = "DFCCKPT 1";

/// Optimizer state worth persisting: the step counter and, for Adam, the
/// moment accumulators.
#[derive(Debug, Clone, Default)]
pub struct OptimizerCheckpoint {
    pub step: u64,
    pub moments: Option<AdamMoments>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub epoch: usize,
    pub params: NetworkParams,
    pub forward_opt: OptimizerCheckpoint,
    pub feedback_opt: OptimizerCheckpoint,
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn push_tensor(out: &mut Vec<u8>, name: &str, m: &Matrix) {
    out.extend_from_slice(format!("{name} {} {}\n", m.rows(), m.cols()).as_bytes());
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn push_vector(out: &mut Vec<u8>, name: &str, v: &[f64]) {
    push_tensor(out, name, &Matrix::column(v));
}

fn push_scalar(out: &mut Vec<u8>, name: &str, v: f64) {
    push_vector(out, name, &[v]);
}

fn moments_tensors(prefix: &str, m: &AdamMoments, out: &mut Vec<u8>) {
    for (i, t) in m.m_w.iter().enumerate() {
        push_tensor(out, &format!("{prefix}_m{i}"), t);
    }
    for (i, t) in m.v_w.iter().enumerate() {
        push_tensor(out, &format!("{prefix}_v{i}"), t);
    }
    for (i, t) in m.m_b.iter().enumerate() {
        push_vector(out, &format!("{prefix}_mb{i}"), t);
    }
    for (i, t) in m.v_b.iter().enumerate() {
        push_vector(out, &format!("{prefix}_vb{i}"), t);
    }
}

pub fn save(ck: &Checkpoint, path: &Path) -> Result<()> {
    let params = &ck.params;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC.as_bytes());
    out.push(b'\n');

    push_scalar(&mut out, "epoch", ck.epoch as f64);
    let arch: Vec<f64> = std::iter::once(params.input_size() as f64)
        .chain(params.layer_widths().iter().map(|&w| w as f64))
        .collect();
    push_vector(&mut out, "arch", &arch);
    let acts: Vec<f64> = params
        .layers
        .iter()
        .map(|l| match l.activation {
            ActivationKind::Linear => 0.0,
            ActivationKind::Tanh => 1.0,
        })
        .collect();
    push_vector(&mut out, "activations", &acts);

    for (i, layer) in params.layers.iter().enumerate() {
        push_tensor(&mut out, &format!("W{}", i + 1), &layer.weight);
        push_vector(&mut out, &format!("b{}", i + 1), &layer.bias);
    }
    for (i, q) in params.feedback.iter().enumerate() {
        push_tensor(&mut out, &format!("Q{}", i + 1), q);
    }

    push_scalar(&mut out, "opt_f_step", ck.forward_opt.step as f64);
    push_scalar(
        &mut out,
        "opt_f_has_moments",
        f64::from(u8::from(ck.forward_opt.moments.is_some())),
    );
    if let Some(m) = &ck.forward_opt.moments {
        moments_tensors("opt_f", m, &mut out);
    }
    push_scalar(&mut out, "opt_fb_step", ck.feedback_opt.step as f64);
    push_scalar(
        &mut out,
        "opt_fb_has_moments",
        f64::from(u8::from(ck.feedback_opt.moments.is_some())),
    );
    if let Some(m) = &ck.feedback_opt.moments {
        moments_tensors("opt_fb", m, &mut out);
    }

    let digest = hex_digest(&out);
    out.extend_from_slice(format!("sha256 {digest}\n").as_bytes());
    fs::write(path, out)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn line(&mut self) -> Result<&'a str> {
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
            self.pos += 1;
        }
        if self.pos >= self.bytes.len() {
            return Err(Error::Parse {
                path: self.path.clone(),
                offset: start as u64,
                details: "unterminated line".into(),
            });
        }
        let line = std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| Error::Parse {
            path: self.path.clone(),
            offset: start as u64,
            details: "non-UTF-8 header line".into(),
        })?;
        self.pos += 1;
        Ok(line)
    }

    fn tensor_payload(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let n = rows * cols;
        let end = self.pos + n * 8;
        if end > self.bytes.len() {
            return Err(Error::Parse {
                path: self.path.clone(),
                offset: self.pos as u64,
                details: format!("truncated tensor payload ({n} values)"),
            });
        }
        let mut data = Vec::with_capacity(n);
        for chunk in self.bytes[self.pos..end].chunks_exact(8) {
            data.push(f64::from_le_bytes(chunk.try_into().expect("8 bytes")));
        }
        self.pos = end;
        Matrix::new(rows, cols, data)
    }
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    let name = path.display().to_string();
    let mut reader = Reader { bytes: &bytes, pos: 0, path: name.clone() };

    let header = reader.line()?;
    if header != MAGIC {
        return Err(Error::Parse {
            path: name,
            offset: 0,
            details: format!("bad checkpoint header '{header}'"),
        });
    }

    let mut tensors: Vec<(String, Matrix)> = Vec::new();
    loop {
        let line_start = reader.pos;
        let line = reader.line()?;
        if let Some(hex) = line.strip_prefix("sha256 ") {
            if hex_digest(&bytes[..line_start]) != hex {
                return Err(Error::Checkpoint(format!("{name}: SHA-256 mismatch")));
            }
            break;
        }
        let mut parts = line.split_whitespace();
        let tname = parts.next().ok_or_else(|| Error::Parse {
            path: name.clone(),
            offset: line_start as u64,
            details: "empty tensor header".into(),
        })?;
        let rows: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse {
                path: name.clone(),
                offset: line_start as u64,
                details: format!("bad tensor header '{line}'"),
            })?;
        let cols: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse {
                path: name.clone(),
                offset: line_start as u64,
                details: format!("bad tensor header '{line}'"),
            })?;
        let m = reader.tensor_payload(rows, cols)?;
        tensors.push((tname.to_string(), m));
    }

    let find = |key: &str| -> Result<&Matrix> {
        tensors
            .iter()
            .find(|(n, _)| n == key)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Checkpoint(format!("{name}: missing tensor '{key}'")))
    };

    let arch: Vec<usize> = find("arch")?.data().iter().map(|&x| x as usize).collect();
    let act_codes: Vec<f64> = find("activations")?.data().to_vec();
    let l = arch.len() - 1;
    let mut layers = Vec::with_capacity(l);
    let mut feedback = Vec::with_capacity(l);
    for (i, code) in act_codes.iter().enumerate().take(l) {
        let weight = find(&format!("W{}", i + 1))?.clone();
        let bias = find(&format!("b{}", i + 1))?.data().to_vec();
        let activation = if *code == 0.0 { ActivationKind::Linear } else { ActivationKind::Tanh };
        layers.push(Layer { weight, bias, activation });
        feedback.push(find(&format!("Q{}", i + 1))?.clone());
    }
    let params = NetworkParams { layers, feedback };
    params.validate()?;

    let load_opt = |prefix: &str| -> Result<OptimizerCheckpoint> {
        let step = find(&format!("{prefix}_step"))?.get(0, 0) as u64;
        let has = find(&format!("{prefix}_has_moments"))?.get(0, 0) != 0.0;
        let moments = if has {
            let count = tensors
                .iter()
                .filter(|(n, _)| n.starts_with(&format!("{prefix}_m")) && !n.starts_with(&format!("{prefix}_mb")))
                .count();
            let mut m_w = Vec::new();
            let mut v_w = Vec::new();
            let mut m_b = Vec::new();
            let mut v_b = Vec::new();
            for i in 0..count {
                m_w.push(find(&format!("{prefix}_m{i}"))?.clone());
                v_w.push(find(&format!("{prefix}_v{i}"))?.clone());
                if let Ok(t) = find(&format!("{prefix}_mb{i}")) {
                    m_b.push(t.data().to_vec());
                    v_b.push(find(&format!("{prefix}_vb{i}"))?.data().to_vec());
                }
            }
            Some(AdamMoments { m_w, v_w, m_b, v_b })
        } else {
            None
        };
        Ok(OptimizerCheckpoint { step, moments })
    };

    Ok(Checkpoint {
        epoch: find("epoch")?.get(0, 0) as usize,
        params,
        forward_opt: load_opt("opt_f")?,
        feedback_opt: load_opt("opt_fb")?,
    })
}

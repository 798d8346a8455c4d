//! Model checkpoints: one file holding backbone and refiner parameters.
//!
//! Little-endian. Layout: magic `PGCK`, version, thirteen u32 config fields,
//! the graph digest (u64), then two tagged sections: `GRPH` (graph text) and
//! `PARM` (named tensors as f32). The file is self-describing: loading
//! rebuilds the model from the header and fails if any tensor is missing,
//! unknown, or misshapen, or if the stored graph does not hash to the stored
//! digest.

use crate::error::{Error, Result};
use crate::graph::{GraphKind, PoseGraph};
use crate::model::{ModelConfig, PoseModel};
use crate::pgnn::PgnnMode;
use crate::tensor::Tensor;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"PGCK";
pub const VERSION: u32 = 1;

fn kind_code(k: GraphKind) -> u32 {
    match k {
        GraphKind::Tree => 0,
        GraphKind::Loopy => 1,
        GraphKind::Custom => 2,
    }
}

fn code_kind(c: u32) -> Result<GraphKind> {
    match c {
        0 => Ok(GraphKind::Tree),
        1 => Ok(GraphKind::Loopy),
        2 => Ok(GraphKind::Custom),
        other => Err(Error::Checkpoint(format!("bad graph kind code {other}"))),
    }
}

pub fn save(model: &PoseModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    let graph = model.pgnn.graph();
    let (map_h, map_w) = model.map_size();
    let fields: [u32; 15] = [
        VERSION,
        model.num_joints() as u32,
        map_h as u32,
        map_w as u32,
        model.backbone.stem_stride() as u32,
        model.backbone.num_stages() as u32,
        model.backbone.width() as u32,
        model.pgnn.msg_kernel() as u32,
        model.pgnn.gate_kernel() as u32,
        model.pgnn.steps as u32,
        match model.pgnn.mode {
            PgnnMode::Gru => 0,
            PgnnMode::Mrf => 1,
        },
        model.backbone.cpf_enabled() as u32,
        model.pgnn.literal_t0_residual as u32,
        kind_code(graph.kind()),
        model.pgnn.hidden_channels() as u32,
    ];
    for v in fields {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&graph.digest().to_le_bytes())?;

    let graph_text = graph.to_text();
    w.write_all(b"GRPH")?;
    w.write_all(&(graph_text.len() as u64).to_le_bytes())?;
    w.write_all(graph_text.as_bytes())?;

    let mut parm = Vec::new();
    let params = model.named_params();
    parm.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in &params {
        parm.extend_from_slice(&(name.len() as u32).to_le_bytes());
        parm.extend_from_slice(name.as_bytes());
        parm.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            parm.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            parm.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    w.write_all(b"PARM")?;
    w.write_all(&(parm.len() as u64).to_le_bytes())?;
    w.write_all(&parm)?;
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    off: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.off + n > self.buf.len() {
            return Err(Error::Checkpoint("unexpected end of file".to_string()));
        }
        let s = &self.buf[self.off..self.off + n];
        self.off += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn load(path: &Path) -> Result<PoseModel> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let mut c = Cursor { buf: &bytes, off: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a checkpoint file".to_string()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let num_joints = c.u32()? as usize;
    let map_h = c.u32()? as usize;
    let map_w = c.u32()? as usize;
    let stem_stride = c.u32()? as usize;
    let stages = c.u32()? as usize;
    let width = c.u32()? as usize;
    let msg_kernel = c.u32()? as usize;
    let gate_kernel = c.u32()? as usize;
    let steps = c.u32()? as usize;
    let mode = match c.u32()? {
        0 => PgnnMode::Gru,
        1 => PgnnMode::Mrf,
        other => return Err(Error::Checkpoint(format!("bad mode code {other}"))),
    };
    let cpf = c.u32()? != 0;
    let literal_t0 = c.u32()? != 0;
    let kind = code_kind(c.u32()?)?;
    let hidden_channels = c.u32()? as usize;
    let digest = c.u64()?;

    if c.take(4)? != b"GRPH" {
        return Err(Error::Checkpoint("missing GRPH section".to_string()));
    }
    let glen = c.u64()? as usize;
    let gtext = std::str::from_utf8(c.take(glen)?)
        .map_err(|_| Error::Checkpoint("graph section is not utf-8".to_string()))?;
    let graph = PoseGraph::from_text(gtext)?;
    if graph.digest() != digest {
        return Err(Error::Checkpoint(format!(
            "graph digest mismatch: header {:#x}, stored graph {:#x}",
            digest,
            graph.digest()
        )));
    }
    if graph.kind() != kind || graph.num_nodes() != num_joints {
        return Err(Error::Checkpoint("graph section disagrees with header".to_string()));
    }

    if c.take(4)? != b"PARM" {
        return Err(Error::Checkpoint("missing PARM section".to_string()));
    }
    let _plen = c.u64()?;
    let count = c.u32()? as usize;
    let mut table: BTreeMap<String, Tensor> = BTreeMap::new();
    for _ in 0..count {
        let nlen = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(nlen)?)
            .map_err(|_| Error::Checkpoint("tensor name is not utf-8".to_string()))?
            .to_string();
        let rank = c.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(c.f32()? as f64);
        }
        table.insert(name, Tensor::new(shape, data)?);
    }

    let cfg = ModelConfig {
        num_joints,
        map_h,
        map_w,
        stem_stride,
        stages,
        width,
        msg_kernel,
        gate_kernel,
        steps,
        graph: kind,
        cpf,
        mode,
        literal_t0_residual: literal_t0,
        hidden_channels,
        seed: 0,
    };
    let mut model = PoseModel::with_graph(&cfg, graph)?;
    for (name, t) in model.named_params_mut() {
        let stored = table.remove(&name).ok_or_else(|| {
            Error::Checkpoint(format!("checkpoint is missing tensor '{name}'"))
        })?;
        if stored.shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor '{name}' is {:?} in file but {:?} in model",
                stored.shape(),
                t.shape()
            )));
        }
        *t = stored;
    }
    if let Some((name, _)) = table.into_iter().next() {
        return Err(Error::Checkpoint(format!("checkpoint has unknown tensor '{name}'")));
    }
    Ok(model)
}

//! On-disk dataset format.
//!
//! Little-endian throughout. Header: magic `PGND`, then seven u32 fields
//! (version=1, count, K, H, W, H_img, W_img). Each sample follows as f32 in
//! declared order: image, joints (x,y per joint), visibility (0/1), ground
//! truth heatmaps, head length, torso length. Round trips are bit-exact on
//! the f32 payload.

use crate::error::{Error, Result};
use crate::synth::Sample;
use crate::tensor::Tensor;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"PGND";
pub const VERSION: u32 = 1;

/// Header byte size: magic + 7 u32 fields.
pub const HEADER_BYTES: usize = 4 + 7 * 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub count: usize,
    pub num_joints: usize,
    pub map_h: usize,
    pub map_w: usize,
    pub img_h: usize,
    pub img_w: usize,
}

impl DatasetHeader {
    /// Floats per sample record.
    pub fn record_floats(&self) -> usize {
        let k = self.num_joints;
        self.img_h * self.img_w + 2 * k + k + k * self.map_h * self.map_w + 2
    }

    pub fn record_bytes(&self) -> usize {
        self.record_floats() * 4
    }

    pub fn file_bytes(&self) -> usize {
        HEADER_BYTES + self.count * self.record_bytes()
    }
}

fn header_of(samples: &[Sample]) -> Result<DatasetHeader> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Dataset("cannot write an empty dataset".to_string()))?;
    let (map_h, map_w) = first.map_size();
    let (img_h, img_w) = first.image_size();
    let k = first.num_joints();
    for (i, s) in samples.iter().enumerate() {
        if s.num_joints() != k || s.map_size() != (map_h, map_w) || s.image_size() != (img_h, img_w)
        {
            return Err(Error::Dataset(format!(
                "sample {i} dimensions disagree with sample 0"
            )));
        }
    }
    Ok(DatasetHeader { count: samples.len(), num_joints: k, map_h, map_w, img_h, img_w })
}

pub fn write_dataset(samples: &[Sample], path: &Path) -> Result<DatasetHeader> {
    let header = header_of(samples)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    for v in [
        VERSION,
        header.count as u32,
        header.num_joints as u32,
        header.map_h as u32,
        header.map_w as u32,
        header.img_h as u32,
        header.img_w as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    let put = |w: &mut BufWriter<File>, v: f64| w.write_all(&(v as f32).to_le_bytes());
    for s in samples {
        for &v in s.image.data() {
            put(&mut w, v)?;
        }
        for &(x, y) in &s.joints {
            put(&mut w, x)?;
            put(&mut w, y)?;
        }
        for &vis in &s.visible {
            put(&mut w, if vis { 1.0 } else { 0.0 })?;
        }
        for &v in s.gt_heatmaps.data() {
            put(&mut w, v)?;
        }
        put(&mut w, s.head_len)?;
        put(&mut w, s.torso_len)?;
    }
    w.flush()?;
    Ok(header)
}

pub fn read_dataset(path: &Path) -> Result<Vec<Sample>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Dataset("file shorter than header".to_string()))?;
    if &magic != MAGIC {
        return Err(Error::Dataset(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(MAGIC)
        )));
    }
    let mut u32s = [0u32; 7];
    for v in u32s.iter_mut() {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)
            .map_err(|_| Error::Dataset("truncated header".to_string()))?;
        *v = u32::from_le_bytes(b);
    }
    if u32s[0] != VERSION {
        return Err(Error::Dataset(format!("unsupported version {}", u32s[0])));
    }
    let header = DatasetHeader {
        count: u32s[1] as usize,
        num_joints: u32s[2] as usize,
        map_h: u32s[3] as usize,
        map_w: u32s[4] as usize,
        img_h: u32s[5] as usize,
        img_w: u32s[6] as usize,
    };
    if header.map_h == 0 || header.img_h == 0 || header.img_h % header.map_h != 0 {
        return Err(Error::Dataset(format!(
            "image height {} is not an integer multiple of map height {}",
            header.img_h, header.map_h
        )));
    }

    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let expect = header.count * header.record_bytes();
    if payload.len() != expect {
        return Err(Error::Dataset(format!(
            "payload is {} bytes, header implies {} ({} samples x {} bytes)",
            payload.len(),
            expect,
            header.count,
            header.record_bytes()
        )));
    }

    let mut samples = Vec::with_capacity(header.count);
    let mut off = 0usize;
    let take = |n: usize, payload: &[u8], off: &mut usize| -> Vec<f64> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let b = [payload[*off], payload[*off + 1], payload[*off + 2], payload[*off + 3]];
            out.push(f32::from_le_bytes(b) as f64);
            *off += 4;
        }
        out
    };
    let k = header.num_joints;
    for _ in 0..header.count {
        let image = take(header.img_h * header.img_w, &payload, &mut off);
        let joint_flat = take(2 * k, &payload, &mut off);
        let vis_flat = take(k, &payload, &mut off);
        let maps = take(k * header.map_h * header.map_w, &payload, &mut off);
        let head_len = take(1, &payload, &mut off)[0];
        let torso_len = take(1, &payload, &mut off)[0];
        samples.push(Sample {
            image: Tensor::new(vec![1, header.img_h, header.img_w], image)?,
            joints: joint_flat.chunks_exact(2).map(|c| (c[0], c[1])).collect(),
            visible: vis_flat.iter().map(|&v| v != 0.0).collect(),
            gt_heatmaps: Tensor::new(vec![k, header.map_h, header.map_w], maps)?,
            head_len,
            torso_len,
        });
    }
    Ok(samples)
}

/// Generate `count` samples from consecutive per-sample seeds. Sample i uses
/// seed derive(base_seed, i), so any subset is reproducible in isolation.
pub fn generate(
    skeleton: &crate::skeleton::Skeleton,
    cfg: &crate::synth::SynthConfig,
    base_seed: u64,
    count: usize,
    threads: usize,
) -> Result<Vec<Sample>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Synth(e.to_string()))?;
    pool.install(|| {
        (0..count)
            .into_par_iter()
            .map(|i| {
                let seed = crate::rng::subseed(base_seed, &format!("sample/{i}"));
                crate::synth::sample_pose(skeleton, seed, cfg)
            })
            .collect()
    })
}

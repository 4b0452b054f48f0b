//! Scenes to labeled, standardized tile datasets: sliding-window
//! extraction, vegetation exclusion, daypart bands, train/validation
//! splits, scene-level flight holdout, and the binary shard format.
//!
//! Shard records are little-endian f32 in canonical order (scene order,
//! then row-major window position): `5*k*k` standardized inputs, 8
//! standardized met values, the centered label, center row, center col,
//! daypart code, microhabitat code, flight index (14 trailing values). `manifest.json`
//! carries counts per split and stratum plus shard content hashes.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{FeatureStack, Standardizer, TGI_THRESHOLD};
use crate::nn::TileBatch;
use crate::synth::SceneBundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Daypart {
    Morning,
    Midday,
    Evening,
}

impl Daypart {
    pub fn code(self) -> u8 {
        match self {
            Daypart::Morning => 0,
            Daypart::Midday => 1,
            Daypart::Evening => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Daypart::Morning),
            1 => Ok(Daypart::Midday),
            2 => Ok(Daypart::Evening),
            _ => Err(Error::format(format!("bad daypart code {code}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Daypart::Morning => "morning",
            Daypart::Midday => "midday",
            Daypart::Evening => "evening",
        }
    }
}

/// Band assignment: morning 6:00-7:00, midday 8:00-16:00, evening
/// 17:00-18:00, all inclusive; times in the gaps are an error.
pub fn daypart_of(solar_time: f64) -> Result<Daypart> {
    if !(0.0..24.0).contains(&solar_time) {
        return Err(Error::config(format!("solar time {solar_time} outside [0, 24)")));
    }
    if (6.0..=7.0).contains(&solar_time) {
        Ok(Daypart::Morning)
    } else if (8.0..=16.0).contains(&solar_time) {
        Ok(Daypart::Midday)
    } else if (17.0..=18.0).contains(&solar_time) {
        Ok(Daypart::Evening)
    } else {
        Err(Error::config(format!("solar time {solar_time} falls outside the daypart bands")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Microhabitat {
    Open,
    Shade,
}

impl Microhabitat {
    pub fn code(self) -> u8 {
        match self {
            Microhabitat::Open => 0,
            Microhabitat::Shade => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Microhabitat::Open),
            1 => Ok(Microhabitat::Shade),
            _ => Err(Error::format(format!("bad microhabitat code {code}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Microhabitat::Open => "open",
            Microhabitat::Shade => "shade",
        }
    }
}

/// One labeled window: standardized inputs, standardized met vector,
/// centered label, and stratum metadata.
#[derive(Debug, Clone)]
pub struct TileRecord {
    /// `5*k*k` values, channel-major.
    pub inputs: Vec<f32>,
    pub met: [f32; 8],
    pub label: f32,
    pub center: (u32, u32),
    pub flight_id: String,
    pub daypart: Daypart,
    pub microhabitat: Microhabitat,
}

/// Copy one standardized k-window (all five channels) into `out`.
pub(crate) fn window_inputs(stack: &FeatureStack, k: usize, top: usize, left: usize, out: &mut Vec<f32>) {
    out.clear();
    out.reserve(5 * k * k);
    for ch in 0..5 {
        let grid = stack.channel(ch);
        for row in top..top + k {
            let base = row * grid.width + left;
            out.extend_from_slice(&grid.values()[base..base + k]);
        }
    }
}

/// Number of window positions per axis for a sliding window.
pub fn positions_per_axis(extent: usize, k: usize, stride: usize) -> usize {
    if k > extent {
        0
    } else {
        (extent - k) / stride + 1
    }
}

/// Count the tiles [`extract_tiles`] would emit, without materializing
/// them: (kept, excluded-by-vegetation). Dense strides over large maps
/// stay cheap this way.
pub fn count_tiles(scene: &SceneBundle, k: usize, stride: usize) -> Result<(usize, usize)> {
    if k % 2 == 0 {
        return Err(Error::config(format!("tile size must be odd, got {k}")));
    }
    let (w, h) = (scene.stack.width(), scene.stack.height());
    if k > w || k > h {
        return Err(Error::config(format!("tile size {k} exceeds the {w}x{h} map")));
    }
    if stride == 0 {
        return Err(Error::config("stride must be at least 1"));
    }
    let half = k / 2;
    let mut kept = 0usize;
    let mut excluded = 0usize;
    let mut top = 0usize;
    while top + k <= h {
        let mut left = 0usize;
        while left + k <= w {
            let (cr, cc) = (top + half, left + half);
            if scene.stack.tgi().get(cr, cc) as f64 > TGI_THRESHOLD
                || !scene.thermal.get(cr, cc).is_finite()
            {
                excluded += 1;
            } else {
                kept += 1;
            }
            left += stride;
        }
        top += stride;
    }
    Ok((kept, excluded))
}

/// Slide a k-window over the scene with the given stride and emit one
/// record per fully interior window whose center pixel is bare ground
/// (raw tgi at or below the vegetation threshold).
pub fn extract_tiles(
    scene: &SceneBundle,
    std: &Standardizer,
    k: usize,
    stride: usize,
) -> Result<Vec<TileRecord>> {
    if k % 2 == 0 {
        return Err(Error::config(format!("tile size must be odd, got {k}")));
    }
    let (w, h) = (scene.stack.width(), scene.stack.height());
    if k > w || k > h {
        return Err(Error::config(format!("tile size {k} exceeds the {w}x{h} map")));
    }
    if stride == 0 {
        return Err(Error::config("stride must be at least 1"));
    }
    let daypart = daypart_of(scene.solar_time)?;
    let zstack = std.standardize_stack(&scene.stack);
    let met64 = std.standardize_met(&scene.met);
    let met: [f32; 8] = core::array::from_fn(|i| met64[i] as f32);
    let half = k / 2;

    let mut records = Vec::new();
    let mut buf = Vec::new();
    let mut top = 0usize;
    while top + k <= h {
        let mut left = 0usize;
        while left + k <= w {
            let (cr, cc) = (top + half, left + half);
            let raw_tgi = scene.stack.tgi().get(cr, cc) as f64;
            if raw_tgi > TGI_THRESHOLD {
                left += stride;
                continue;
            }
            let truth = scene.thermal.get(cr, cc);
            if !truth.is_finite() {
                left += stride;
                continue;
            }
            window_inputs(&zstack, k, top, left, &mut buf);
            let microhabitat = if scene.stack.shade().get(cr, cc) >= 0.5 {
                Microhabitat::Shade
            } else {
                Microhabitat::Open
            };
            records.push(TileRecord {
                inputs: buf.clone(),
                met,
                label: std.center_label(truth as f64) as f32,
                center: (cr as u32, cc as u32),
                flight_id: scene.flight_id.clone(),
                daypart,
                microhabitat,
            });
            left += stride;
        }
        top += stride;
    }
    Ok(records)
}

/// Seeded uniform shuffle followed by an 80/20-style split. Returns
/// disjoint, exhaustive (train, val) partitions.
pub fn split_train_val(
    records: Vec<TileRecord>,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<TileRecord>, Vec<TileRecord>)> {
    if records.is_empty() {
        return Err(Error::config("cannot split an empty record list"));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::config(format!("split fraction {fraction} outside [0, 1]")));
    }
    let mut idx: Vec<usize> = (0..records.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((records.len() as f64 * fraction).round() as usize).min(records.len());
    let mut slots: Vec<Option<TileRecord>> = records.into_iter().map(Some).collect();
    let train: Vec<TileRecord> = idx[..n_train].iter().map(|&i| slots[i].take().unwrap()).collect();
    let val: Vec<TileRecord> = idx[n_train..].iter().map(|&i| slots[i].take().unwrap()).collect();
    Ok((train, val))
}

/// Scene-level holdout: scenes whose flight id is listed go to the test
/// side, everything else trains. No scene can appear on both sides.
pub fn assign_flights(
    scenes: Vec<SceneBundle>,
    test_flight_ids: &[String],
) -> Result<(Vec<SceneBundle>, Vec<SceneBundle>)> {
    if test_flight_ids.is_empty() {
        return Err(Error::config("empty test flight list"));
    }
    for (i, id) in test_flight_ids.iter().enumerate() {
        if test_flight_ids[..i].contains(id) {
            return Err(Error::config(format!("flight id {id} listed twice")));
        }
        if !scenes.iter().any(|s| &s.flight_id == id) {
            return Err(Error::config(format!("unknown test flight id {id}")));
        }
    }
    let (test, train): (Vec<_>, Vec<_>) = scenes
        .into_iter()
        .partition(|s| test_flight_ids.contains(&s.flight_id));
    if train.is_empty() {
        return Err(Error::config("holdout consumed every flight; nothing left to train on"));
    }
    Ok((train, test))
}

/// Dense arrays for the training loop.
pub fn records_to_batch(records: &[TileRecord], k: usize) -> TileBatch {
    let mut batch = TileBatch::new(k);
    for r in records {
        batch.push(&r.inputs, &r.met, r.label);
    }
    batch
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StratumCount {
    pub microhabitat: Microhabitat,
    pub daypart: Daypart,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSummary {
    pub count: usize,
    pub strata: Vec<StratumCount>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub tile_size: usize,
    pub stride: usize,
    pub record_len: usize,
    pub standardizer_fingerprint: String,
    /// Flight-id table; records store an index into it.
    pub flights: Vec<String>,
    pub train: SplitSummary,
    pub val: SplitSummary,
    /// Hex sha256 per shard file.
    pub content_hash: BTreeMap<String, String>,
}

fn summarize(records: &[TileRecord]) -> SplitSummary {
    let mut map: BTreeMap<(Microhabitat, Daypart), usize> = BTreeMap::new();
    for r in records {
        *map.entry((r.microhabitat, r.daypart)).or_default() += 1;
    }
    SplitSummary {
        count: records.len(),
        strata: map
            .into_iter()
            .map(|((m, d), count)| StratumCount { microhabitat: m, daypart: d, count })
            .collect(),
    }
}

pub fn record_len(k: usize) -> usize {
    5 * k * k + 14
}

fn encode_shard(records: &[TileRecord], k: usize, flights: &[String]) -> Result<Vec<u8>> {
    let mut bytes = Vec::with_capacity(records.len() * record_len(k) * 4);
    for r in records {
        if r.inputs.len() != 5 * k * k {
            return Err(Error::dimension("record does not match the shard tile size"));
        }
        let flight_index = flights
            .iter()
            .position(|f| f == &r.flight_id)
            .ok_or_else(|| Error::format("flight id missing from table"))? as f32;
        let mut push = |v: f32| bytes.extend_from_slice(&v.to_le_bytes());
        for &v in &r.inputs {
            push(v);
        }
        for &v in &r.met {
            push(v);
        }
        push(r.label);
        push(r.center.0 as f32);
        push(r.center.1 as f32);
        push(r.daypart.code() as f32);
        push(r.microhabitat.code() as f32);
        push(flight_index);
    }
    Ok(bytes)
}

fn decode_shard(bytes: &[u8], k: usize, flights: &[String]) -> Result<Vec<TileRecord>> {
    let rec_f32 = record_len(k);
    let rec_bytes = rec_f32 * 4;
    if bytes.len() % rec_bytes != 0 {
        return Err(Error::format(format!(
            "shard length {} is not a multiple of the record size {rec_bytes}",
            bytes.len()
        )));
    }
    let mut records = Vec::with_capacity(bytes.len() / rec_bytes);
    for chunk in bytes.chunks_exact(rec_bytes) {
        let vals: Vec<f32> = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let n_in = 5 * k * k;
        let mut met = [0f32; 8];
        met.copy_from_slice(&vals[n_in..n_in + 8]);
        let tail = &vals[n_in + 8..];
        let flight_index = tail[5] as usize;
        let flight_id = flights
            .get(flight_index)
            .ok_or_else(|| Error::format(format!("flight index {flight_index} out of table")))?
            .clone();
        records.push(TileRecord {
            inputs: vals[..n_in].to_vec(),
            met,
            label: tail[0],
            center: (tail[1] as u32, tail[2] as u32),
            flight_id,
            daypart: Daypart::from_code(tail[3] as u8)?,
            microhabitat: Microhabitat::from_code(tail[4] as u8)?,
        });
    }
    Ok(records)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Persist one tile-size dataset: `train.bin`, `val.bin`, and
/// `manifest.json`, content-hashed.
pub fn write_dataset(
    dir: impl AsRef<Path>,
    k: usize,
    stride: usize,
    std_fingerprint: &str,
    train: &[TileRecord],
    val: &[TileRecord],
) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut flights: Vec<String> = Vec::new();
    for r in train.iter().chain(val) {
        if !flights.contains(&r.flight_id) {
            flights.push(r.flight_id.clone());
        }
    }
    let train_bytes = encode_shard(train, k, &flights)?;
    let val_bytes = encode_shard(val, k, &flights)?;
    let mut content_hash = BTreeMap::new();
    content_hash.insert("train.bin".to_string(), sha256_hex(&train_bytes));
    content_hash.insert("val.bin".to_string(), sha256_hex(&val_bytes));
    std::fs::write(dir.join("train.bin"), &train_bytes)?;
    std::fs::write(dir.join("val.bin"), &val_bytes)?;
    let manifest = DatasetManifest {
        tile_size: k,
        stride,
        record_len: record_len(k),
        standardizer_fingerprint: std_fingerprint.to_string(),
        flights,
        train: summarize(train),
        val: summarize(val),
        content_hash,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::format(format!("manifest encode: {e}")))?;
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(manifest)
}

/// Load a dataset directory back into records, verifying content hashes.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(DatasetManifest, Vec<TileRecord>, Vec<TileRecord>)> {
    let dir = dir.as_ref();
    let manifest: DatasetManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)
            .map_err(|e| Error::format(format!("manifest decode: {e}")))?;
    let load = |name: &str| -> Result<Vec<TileRecord>> {
        let bytes = std::fs::read(dir.join(name))?;
        let expect = manifest
            .content_hash
            .get(name)
            .ok_or_else(|| Error::format(format!("{name} missing from manifest hashes")))?;
        let got = sha256_hex(&bytes);
        if &got != expect {
            return Err(Error::format(format!("{name} content hash mismatch")));
        }
        decode_shard(&bytes, manifest.tile_size, &manifest.flights)
    };
    let train = load("train.bin")?;
    let val = load("val.bin")?;
    if train.len() != manifest.train.count || val.len() != manifest.val.count {
        return Err(Error::format("manifest counts disagree with shard contents"));
    }
    Ok((manifest, train, val))
}

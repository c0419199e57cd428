//! On-disk formats: the LCP1 dataset container, the LCKP model checkpoint,
//! CSV import for measured channel traces, and atomic file writes.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;

use crate::autodiff::Matrix;
use crate::error::{LabError, Result};
use crate::model::{MixerKind, ModelConfig, ModelParams};

pub const LCP1_MAGIC: &[u8; 4] = b"LCP1";
pub const LCKP_MAGIC: &[u8; 4] = b"LCKP";
pub const FORMAT_VERSION: u32 = 1;

/// In-memory image of an LCP1 file: `num_samples` channel sequences of
/// `frames_per_sample` frames each, row-major over [R x T].
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub num_samples: usize,
    pub frames_per_sample: usize,
    pub r: usize,
    pub t: usize,
    /// sample-major, frame-major, row-major complex entries.
    pub data: Vec<Complex64>,
}

impl DatasetFile {
    pub fn sample(&self, s: usize) -> &[Complex64] {
        let sz = self.frames_per_sample * self.r * self.t;
        &self.data[s * sz..(s + 1) * sz]
    }
}

/// Write via a temp file in the same directory, then rename into place.
pub fn atomic_write(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let tmp = path.with_extension("tmp.partial");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        body(&mut w)?;
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f32(r: &mut impl Read) -> Result<f32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(f32::from_le_bytes(buf))
}

pub fn write_lcp1(path: &Path, ds: &DatasetFile) -> Result<()> {
    let expected = ds.num_samples * ds.frames_per_sample * ds.r * ds.t;
    if ds.data.len() != expected {
        return Err(LabError::Shape(format!(
            "dataset holds {} entries, header implies {}",
            ds.data.len(),
            expected
        )));
    }
    atomic_write(path, |w| {
        w.write_all(LCP1_MAGIC)?;
        write_u32(w, FORMAT_VERSION)?;
        write_u32(w, ds.num_samples as u32)?;
        write_u32(w, ds.frames_per_sample as u32)?;
        write_u32(w, ds.r as u32)?;
        write_u32(w, ds.t as u32)?;
        for h in &ds.data {
            w.write_all(&(h.re as f32).to_le_bytes())?;
            w.write_all(&(h.im as f32).to_le_bytes())?;
        }
        Ok(())
    })
}

pub fn read_lcp1(path: &Path) -> Result<DatasetFile> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != LCP1_MAGIC {
        return Err(LabError::Data(format!("{}: not an LCP1 dataset", path.display())));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(LabError::Data(format!("unsupported LCP1 version {}", version)));
    }
    let num_samples = read_u32(&mut r)? as usize;
    let frames = read_u32(&mut r)? as usize;
    let rr = read_u32(&mut r)? as usize;
    let tt = read_u32(&mut r)? as usize;
    let total = num_samples * frames * rr * tt;
    let mut data = Vec::with_capacity(total);
    for _ in 0..total {
        let re = read_f32(&mut r)? as f64;
        let im = read_f32(&mut r)? as f64;
        data.push(Complex64::new(re, im));
    }
    Ok(DatasetFile { num_samples, frames_per_sample: frames, r: rr, t: tt, data })
}

/// JSON-style sidecar describing the generator settings.
pub fn write_sidecar(path: &Path, fields: &[(&str, String)]) -> Result<()> {
    atomic_write(path, |w| {
        writeln!(w, "{{")?;
        for (i, (k, v)) in fields.iter().enumerate() {
            let comma = if i + 1 == fields.len() { "" } else { "," };
            writeln!(w, "  \"{}\": {}{}", k, v, comma)?;
        }
        writeln!(w, "}}")?;
        Ok(())
    })
}

fn config_text(cfg: &ModelConfig) -> String {
    format!(
        "n_past = {}\nn_future = {}\nd_model = {}\nn_layers = {}\nr = {}\nt = {}\nmixer = {}\nheads = {}\nuse_pos_enc = {}\n",
        cfg.n_past, cfg.n_future, cfg.d_model, cfg.n_layers, cfg.r, cfg.t,
        cfg.mixer.as_str(), cfg.heads, cfg.use_pos_enc
    )
}

fn parse_config_text(text: &str) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::default();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| LabError::Data(format!("bad checkpoint config line '{}'", line)))?;
        let (key, value) = (key.trim(), value.trim());
        let parse_usize = || -> Result<usize> {
            value
                .parse()
                .map_err(|_| LabError::Data(format!("bad value '{}' for '{}'", value, key)))
        };
        match key {
            "n_past" => cfg.n_past = parse_usize()?,
            "n_future" => cfg.n_future = parse_usize()?,
            "d_model" => cfg.d_model = parse_usize()?,
            "n_layers" => cfg.n_layers = parse_usize()?,
            "r" => cfg.r = parse_usize()?,
            "t" => cfg.t = parse_usize()?,
            "heads" => cfg.heads = parse_usize()?,
            "mixer" => cfg.mixer = MixerKind::parse(value)?,
            "use_pos_enc" => cfg.use_pos_enc = value == "true",
            other => return Err(LabError::Data(format!("unknown checkpoint key '{}'", other))),
        }
    }
    Ok(cfg)
}

fn write_named_matrix(w: &mut impl Write, name: &str, m: &Matrix) -> Result<()> {
    write_u32(w, name.len() as u32)?;
    w.write_all(name.as_bytes())?;
    write_u32(w, 2)?; // rank
    write_u32(w, m.rows as u32)?;
    write_u32(w, m.cols as u32)?;
    for &v in &m.data {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn write_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    let mut entries: Vec<(String, Matrix)> = params.named_trainable();
    entries.push(("input_mean".into(), params.input_mean.clone()));
    entries.push(("input_std".into(), params.input_std.clone()));
    let cfg_text = config_text(&params.cfg);
    atomic_write(path, |w| {
        w.write_all(LCKP_MAGIC)?;
        write_u32(w, FORMAT_VERSION)?;
        write_u32(w, cfg_text.len() as u32)?;
        w.write_all(cfg_text.as_bytes())?;
        write_u32(w, entries.len() as u32)?;
        for (name, m) in &entries {
            write_named_matrix(w, name, m)?;
        }
        Ok(())
    })
}

pub fn read_checkpoint(path: &Path) -> Result<ModelParams> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != LCKP_MAGIC {
        return Err(LabError::Data(format!("{}: not an LCKP checkpoint", path.display())));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(LabError::Data(format!("unsupported checkpoint version {}", version)));
    }
    let cfg_len = read_u32(&mut r)? as usize;
    let mut cfg_buf = vec![0u8; cfg_len];
    r.read_exact(&mut cfg_buf)?;
    let cfg = parse_config_text(
        std::str::from_utf8(&cfg_buf)
            .map_err(|_| LabError::Data("checkpoint config is not UTF-8".into()))?,
    )?;

    let count = read_u32(&mut r)? as usize;
    let mut entries = std::collections::HashMap::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf)?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| LabError::Data("checkpoint parameter name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        if rank != 2 {
            return Err(LabError::Data(format!("parameter '{}' has rank {}", name, rank)));
        }
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(read_f32(&mut r)? as f64);
        }
        entries.insert(name, Matrix::from_vec(rows, cols, data));
    }

    // Materialize a skeleton with the right shapes, then fill by name.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut params = ModelParams::init(&cfg, &mut rng)?;
    let mut missing = Vec::new();
    params.visit_mut(|name, m| match entries.get(&name) {
        Some(stored) if stored.rows == m.rows && stored.cols == m.cols => *m = stored.clone(),
        Some(stored) => missing.push(format!(
            "'{}' is {}x{}, expected {}x{}",
            name, stored.rows, stored.cols, m.rows, m.cols
        )),
        None => missing.push(format!("missing parameter '{}'", name)),
    });
    for (field, dst) in [("input_mean", &mut params.input_mean), ("input_std", &mut params.input_std)] {
        match entries.get(field) {
            Some(m) if m.cols == dst.cols => *dst = m.clone(),
            _ => missing.push(format!("missing or mis-sized '{}'", field)),
        }
    }
    if !missing.is_empty() {
        return Err(LabError::Data(format!("checkpoint mismatch: {}", missing.join("; "))));
    }
    Ok(params)
}

/// Parse a measured-CSI CSV: one frame per line, 2*R*T columns of
/// re,im pairs in row-major antenna order.
pub fn import_csv(path: &Path, r: usize, t: usize) -> Result<DatasetFile> {
    let text = fs::read_to_string(path)?;
    let want = 2 * r * t;
    let mut data = Vec::new();
    let mut frames = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != want {
            return Err(LabError::Data(format!(
                "line {}: {} fields, expected {} for R={} T={}",
                lineno + 1,
                fields.len(),
                want,
                r,
                t
            )));
        }
        for pair in fields.chunks(2) {
            let re: f64 = pair[0]
                .parse()
                .map_err(|_| LabError::Data(format!("line {}: bad number '{}'", lineno + 1, pair[0])))?;
            let im: f64 = pair[1]
                .parse()
                .map_err(|_| LabError::Data(format!("line {}: bad number '{}'", lineno + 1, pair[1])))?;
            data.push(Complex64::new(re, im));
        }
        frames += 1;
    }
    if frames == 0 {
        return Err(LabError::Data("CSV holds no frames".into()));
    }
    Ok(DatasetFile { num_samples: 1, frames_per_sample: frames, r, t, data })
}

/// Write a matrix as plain CSV, one row per line.
pub fn write_matrix_csv(path: &Path, m: &Matrix) -> Result<()> {
    atomic_write(path, |w| {
        for i in 0..m.rows {
            let row: Vec<String> = m.row(i).iter().map(|v| format!("{}", v)).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    })
}

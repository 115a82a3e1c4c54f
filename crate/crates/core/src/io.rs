//! On-disk formats: PLY clouds, OBJ meshes, binary checkpoints, CSV logs,
//! JSON results, and the flat `key = value` run-config format.
//!
//! Checkpoints are a little-endian binary container: an 8-byte magic, a u32
//! version, then the payload. Training checkpoints store the full resumable
//! state (model config and parameters, code bank, optimizer moments, epoch
//! counter, canonical frame) so a resumed run continues bit-identically.
//! Floating-point text output uses Rust's shortest round-trip formatting, so
//! ASCII formats also reproduce values exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::Vector3;
use serde::Serialize;

use crate::error::IoError;
use crate::field::{CodeBank, FieldConfig};
use crate::meshing::TriangleMesh;
use crate::metrics::ChamferReport;
use crate::objective::LossWeights;
use crate::pose_init::{PoseNetConfig, PoseNetModel};
use crate::sampling::{CanonicalFrame, OrientedPointCloud, SamplerConfig};
use crate::trainer::{AdamState, EpochLog, OptimizerState, TrainConfig, TrainState};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DIFORMCK";
pub const POSENET_MAGIC: &[u8; 8] = b"DIFORMPN";
pub const CHECKPOINT_VERSION: u32 = 1;

fn parse_err(path: &Path, what: impl Into<String>) -> IoError {
    IoError::Parse { path: path.display().to_string(), what: what.into() }
}

// ---------------------------------------------------------------- PLY

/// Writes an oriented cloud as ASCII PLY with x,y,z,nx,ny,nz doubles.
pub fn write_ply_ascii(path: &Path, cloud: &OrientedPointCloud) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ply_header(&mut w, "ascii", cloud.len())?;
    for (p, n) in cloud.points.iter().zip(&cloud.normals) {
        writeln!(w, "{} {} {} {} {} {}", p.x, p.y, p.z, n.x, n.y, n.z)?;
    }
    Ok(())
}

/// Writes an oriented cloud as binary little-endian PLY.
pub fn write_ply_binary(path: &Path, cloud: &OrientedPointCloud) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ply_header(&mut w, "binary_little_endian", cloud.len())?;
    for (p, n) in cloud.points.iter().zip(&cloud.normals) {
        for v in [p.x, p.y, p.z, n.x, n.y, n.z] {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

fn write_ply_header<W: Write>(w: &mut W, format: &str, n: usize) -> Result<(), IoError> {
    writeln!(w, "ply")?;
    writeln!(w, "format {format} 1.0")?;
    writeln!(w, "element vertex {n}")?;
    for prop in ["x", "y", "z", "nx", "ny", "nz"] {
        writeln!(w, "property double {prop}")?;
    }
    writeln!(w, "end_header")?;
    Ok(())
}

/// Reads an ASCII or binary little-endian PLY with the six x,y,z,nx,ny,nz
/// properties (float or double).
pub fn read_ply(path: &Path) -> Result<OrientedPointCloud, IoError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != "ply" {
        return Err(parse_err(path, "missing 'ply' magic line"));
    }
    let mut format = None;
    let mut n_vertices = None;
    let mut props: Vec<(String, bool)> = Vec::new(); // (name, is_double)
    let mut in_vertex_element = false;
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(parse_err(path, "unexpected end of header"));
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["comment", ..] => {}
            ["format", f, "1.0"] => format = Some(f.to_string()),
            ["element", "vertex", n] => {
                in_vertex_element = true;
                n_vertices =
                    Some(n.parse::<usize>().map_err(|_| parse_err(path, "bad vertex count"))?);
            }
            ["element", ..] => {
                return Err(parse_err(path, "only the vertex element is supported"));
            }
            ["property", ty, name] if in_vertex_element => {
                let is_double = match *ty {
                    "double" | "float64" => true,
                    "float" | "float32" => false,
                    _ => return Err(parse_err(path, format!("unsupported property type {ty}"))),
                };
                props.push((name.to_string(), is_double));
            }
            _ => return Err(parse_err(path, format!("unrecognized header line: {}", line.trim()))),
        }
    }
    let format = format.ok_or_else(|| parse_err(path, "missing format line"))?;
    let n = n_vertices.ok_or_else(|| parse_err(path, "missing vertex element"))?;
    let names: Vec<&str> = props.iter().map(|(n, _)| n.as_str()).collect();
    if names != ["x", "y", "z", "nx", "ny", "nz"] {
        return Err(parse_err(path, format!("expected x,y,z,nx,ny,nz properties, got {names:?}")));
    }

    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    match format.as_str() {
        "ascii" => {
            for _ in 0..n {
                line.clear();
                if r.read_line(&mut line)? == 0 {
                    return Err(parse_err(path, "truncated vertex data"));
                }
                let vals: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| parse_err(path, format!("bad vertex value: {e}")))?;
                if vals.len() != 6 {
                    return Err(parse_err(path, "vertex row must have 6 values"));
                }
                points.push(Vector3::new(vals[0], vals[1], vals[2]));
                normals.push(Vector3::new(vals[3], vals[4], vals[5]));
            }
        }
        "binary_little_endian" => {
            for _ in 0..n {
                let mut vals = [0.0; 6];
                for (v, (_, is_double)) in vals.iter_mut().zip(&props) {
                    *v = if *is_double {
                        r.read_f64::<LittleEndian>()?
                    } else {
                        r.read_f32::<LittleEndian>()? as f64
                    };
                }
                points.push(Vector3::new(vals[0], vals[1], vals[2]));
                normals.push(Vector3::new(vals[3], vals[4], vals[5]));
            }
        }
        other => return Err(parse_err(path, format!("unsupported PLY format {other}"))),
    }
    Ok(OrientedPointCloud { points, normals })
}

// ---------------------------------------------------------------- OBJ

/// Writes a triangle mesh as OBJ (`v` vertices, `f` 1-based faces).
pub fn write_obj(path: &Path, mesh: &TriangleMesh) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for t in &mesh.triangles {
        writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    Ok(())
}

/// Reads an OBJ written by `write_obj` (v/f lines only; other lines skipped).
pub fn read_obj(path: &Path) -> Result<TriangleMesh, IoError> {
    let r = BufReader::new(File::open(path)?);
    let mut mesh = TriangleMesh::default();
    for line in r.lines() {
        let line = line?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["v", x, y, z] => {
                let p = |s: &str| {
                    s.parse::<f64>().map_err(|e| parse_err(path, format!("bad vertex: {e}")))
                };
                mesh.vertices.push(Vector3::new(p(x)?, p(y)?, p(z)?));
            }
            ["f", a, b, c] => {
                let p = |s: &str| -> Result<u32, IoError> {
                    let i: u32 = s
                        .split('/')
                        .next()
                        .unwrap_or("")
                        .parse()
                        .map_err(|e| parse_err(path, format!("bad face index: {e}")))?;
                    if i == 0 {
                        return Err(parse_err(path, "face indices are 1-based"));
                    }
                    Ok(i - 1)
                };
                mesh.triangles.push([p(a)?, p(b)?, p(c)?]);
            }
            _ => {}
        }
    }
    for t in &mesh.triangles {
        if t.iter().any(|&i| i as usize >= mesh.vertices.len()) {
            return Err(parse_err(path, "face index out of range"));
        }
    }
    Ok(mesh)
}

// ------------------------------------------------------- binary container

fn write_string<W: Write>(w: &mut W, s: &str) -> Result<(), IoError> {
    w.write_u64::<LittleEndian>(s.len() as u64)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_string<R: Read>(r: &mut R, path: &Path) -> Result<String, IoError> {
    let len = r.read_u64::<LittleEndian>()? as usize;
    if len > 1 << 24 {
        return Err(parse_err(path, "unreasonable string length"));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| parse_err(path, "invalid utf-8 string"))
}

fn write_f64s<W: Write>(w: &mut W, v: &[f64]) -> Result<(), IoError> {
    w.write_u64::<LittleEndian>(v.len() as u64)?;
    for &x in v {
        w.write_f64::<LittleEndian>(x)?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R) -> Result<Vec<f64>, IoError> {
    let len = r.read_u64::<LittleEndian>()? as usize;
    let mut v = Vec::with_capacity(len.min(1 << 24));
    for _ in 0..len {
        v.push(r.read_f64::<LittleEndian>()?);
    }
    Ok(v)
}

fn write_field_config<W: Write>(w: &mut W, c: &FieldConfig) -> Result<(), IoError> {
    for v in [c.pe_bands, c.identity_dim, c.deformation_dim, c.hidden_width, c.n_layers, c.skip_layer]
    {
        w.write_u64::<LittleEndian>(v as u64)?;
    }
    Ok(())
}

fn read_field_config<R: Read>(r: &mut R) -> Result<FieldConfig, IoError> {
    let mut v = [0usize; 6];
    for x in &mut v {
        *x = r.read_u64::<LittleEndian>()? as usize;
    }
    Ok(FieldConfig {
        pe_bands: v[0],
        identity_dim: v[1],
        deformation_dim: v[2],
        hidden_width: v[3],
        n_layers: v[4],
        skip_layer: v[5],
    })
}

fn write_adam<W: Write>(w: &mut W, a: &AdamState) -> Result<(), IoError> {
    w.write_u64::<LittleEndian>(a.t)?;
    write_f64s(w, &a.m)?;
    write_f64s(w, &a.v)
}

fn read_adam<R: Read>(r: &mut R) -> Result<AdamState, IoError> {
    let t = r.read_u64::<LittleEndian>()?;
    let m = read_f64s(r)?;
    let v = read_f64s(r)?;
    Ok(AdamState { m, v, t })
}

/// Writes a full training checkpoint.
pub fn write_checkpoint(path: &Path, state: &TrainState) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    write_field_config(&mut w, &state.model.config)?;
    w.write_f64::<LittleEndian>(state.frame.scale)?;
    for d in 0..3 {
        w.write_f64::<LittleEndian>(state.frame.center[d])?;
    }
    w.write_u64::<LittleEndian>(state.epoch as u64)?;
    write_f64s(&mut w, &state.model.params)?;

    w.write_u64::<LittleEndian>(state.codes.identity.len() as u64)?;
    for (k, z) in &state.codes.identity {
        write_string(&mut w, k)?;
        write_f64s(&mut w, z)?;
    }
    w.write_u64::<LittleEndian>(state.codes.deformation.len() as u64)?;
    for ((s, d), z) in &state.codes.deformation {
        write_string(&mut w, s)?;
        write_string(&mut w, d)?;
        write_f64s(&mut w, z)?;
    }

    write_adam(&mut w, &state.opt.params)?;
    w.write_u64::<LittleEndian>(state.opt.identity.len() as u64)?;
    for (k, a) in &state.opt.identity {
        write_string(&mut w, k)?;
        write_adam(&mut w, a)?;
    }
    w.write_u64::<LittleEndian>(state.opt.deformation.len() as u64)?;
    for ((s, d), a) in &state.opt.deformation {
        write_string(&mut w, s)?;
        write_string(&mut w, d)?;
        write_adam(&mut w, a)?;
    }
    Ok(())
}

/// Reads a training checkpoint, verifying magic, version, and config
/// consistency.
pub fn read_checkpoint(path: &Path) -> Result<TrainState, IoError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(IoError::BadMagic {
            expected: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
        });
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != CHECKPOINT_VERSION {
        return Err(IoError::VersionMismatch { got: version, supported: CHECKPOINT_VERSION });
    }
    let config = read_field_config(&mut r)?;
    config
        .validate()
        .map_err(|e| IoError::ConfigMismatch { what: e.to_string() })?;
    let scale = r.read_f64::<LittleEndian>()?;
    let mut center = Vector3::zeros();
    for d in 0..3 {
        center[d] = r.read_f64::<LittleEndian>()?;
    }
    let epoch = r.read_u64::<LittleEndian>()? as usize;
    let params = read_f64s(&mut r)?;
    if params.len() != config.param_count() {
        return Err(IoError::ConfigMismatch {
            what: format!(
                "parameter count {} does not match config ({})",
                params.len(),
                config.param_count()
            ),
        });
    }

    let mut codes = CodeBank::default();
    let ni = r.read_u64::<LittleEndian>()? as usize;
    for _ in 0..ni {
        let k = read_string(&mut r, path)?;
        let z = read_f64s(&mut r)?;
        if z.len() != config.identity_dim {
            return Err(IoError::ConfigMismatch { what: format!("identity code '{k}' wrong dim") });
        }
        codes.identity.insert(k, z);
    }
    let nd = r.read_u64::<LittleEndian>()? as usize;
    for _ in 0..nd {
        let s = read_string(&mut r, path)?;
        let d = read_string(&mut r, path)?;
        let z = read_f64s(&mut r)?;
        if z.len() != config.deformation_dim {
            return Err(IoError::ConfigMismatch {
                what: format!("deformation code '{s}/{d}' wrong dim"),
            });
        }
        codes.deformation.insert((s, d), z);
    }

    let opt_params = read_adam(&mut r)?;
    let mut opt = OptimizerState {
        params: opt_params,
        identity: Default::default(),
        deformation: Default::default(),
    };
    let ni = r.read_u64::<LittleEndian>()? as usize;
    for _ in 0..ni {
        let k = read_string(&mut r, path)?;
        opt.identity.insert(k, read_adam(&mut r)?);
    }
    let nd = r.read_u64::<LittleEndian>()? as usize;
    for _ in 0..nd {
        let s = read_string(&mut r, path)?;
        let d = read_string(&mut r, path)?;
        opt.deformation.insert((s, d), read_adam(&mut r)?);
    }

    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(parse_err(path, "trailing bytes after checkpoint payload"));
    }
    Ok(TrainState {
        model: crate::field::FieldModel { config, params },
        codes,
        opt,
        epoch,
        frame: CanonicalFrame { scale, center },
    })
}

/// Writes a pose-regressor checkpoint (distinct magic, same container
/// conventions).
pub fn write_posenet(path: &Path, model: &PoseNetModel) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(POSENET_MAGIC)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    for d in model.config.encoder_widths.iter().chain(model.config.head_widths.iter()) {
        w.write_u64::<LittleEndian>(*d as u64)?;
    }
    write_f64s(&mut w, &model.params)
}

pub fn read_posenet(path: &Path) -> Result<PoseNetModel, IoError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != POSENET_MAGIC {
        return Err(IoError::BadMagic {
            expected: String::from_utf8_lossy(POSENET_MAGIC).into_owned(),
        });
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != CHECKPOINT_VERSION {
        return Err(IoError::VersionMismatch { got: version, supported: CHECKPOINT_VERSION });
    }
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = r.read_u64::<LittleEndian>()? as usize;
    }
    let config = PoseNetConfig {
        encoder_widths: [dims[0], dims[1], dims[2]],
        head_widths: [dims[3], dims[4]],
    };
    let params = read_f64s(&mut r)?;
    if params.len() != config.param_count() {
        return Err(IoError::ConfigMismatch {
            what: format!(
                "posenet parameter count {} does not match config ({})",
                params.len(),
                config.param_count()
            ),
        });
    }
    Ok(PoseNetModel { config, params })
}

// ---------------------------------------------------------------- CSV

/// Training log with the documented column set.
pub fn write_train_log(path: &Path, logs: &[EpochLog]) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "epoch,total,surface_sdf,normal,eikonal,offsurface,code_reg,wall_seconds")?;
    for l in logs {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            l.epoch,
            l.mean.total,
            l.mean.surface_sdf,
            l.mean.normal,
            l.mean.eikonal,
            l.mean.offsurface,
            l.mean.code_reg,
            l.wall_seconds
        )?;
    }
    Ok(())
}

/// One evaluation row: Chamfer report plus optional pose error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub shape_id: String,
    pub chamfer: ChamferReport,
    pub rpe_deg: Option<f64>,
    pub rpe_len: Option<f64>,
}

pub fn write_eval_csv(path: &Path, rows: &[EvalRow]) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "shape-id,cd_sym,cd_r_to_g,cd_g_to_r,rpe_deg,rpe_len")?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for row in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            row.shape_id,
            row.chamfer.cd_sym,
            row.chamfer.cd_r_to_g,
            row.chamfer.cd_g_to_r,
            opt(row.rpe_deg),
            opt(row.rpe_len)
        )?;
    }
    Ok(())
}

/// Pretty-printed JSON for result records.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

// ------------------------------------------------------------ run config

/// Parses the flat `key = value` run-config text: one pair per line, `#`
/// comments, blank lines ignored.
pub fn parse_config_text(path: &Path, text: &str) -> Result<Vec<(String, String)>, IoError> {
    let mut out = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(path, format!("line {}: expected 'key = value'", ln + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_config_file(path: &Path) -> Result<Vec<(String, String)>, IoError> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    parse_config_text(path, &text)
}

fn parse_val<T: std::str::FromStr>(path: &Path, key: &str, v: &str) -> Result<T, IoError> {
    v.parse()
        .map_err(|_| parse_err(path, format!("key '{key}': cannot parse value '{v}'")))
}

/// Applies run-config pairs onto a TrainConfig; unknown keys are rejected.
pub fn apply_train_config(
    path: &Path,
    pairs: &[(String, String)],
    cfg: &mut TrainConfig,
) -> Result<(), IoError> {
    for (k, v) in pairs {
        apply_train_key(path, k, v, cfg)?;
    }
    Ok(())
}

fn apply_train_key(
    path: &Path,
    key: &str,
    v: &str,
    cfg: &mut TrainConfig,
) -> Result<(), IoError> {
    match key {
        "epochs" => cfg.epochs = parse_val(path, key, v)?,
        "batch_size" => cfg.batch_size = parse_val(path, key, v)?,
        "learning_rate" => cfg.learning_rate = parse_val(path, key, v)?,
        "seed" => cfg.seed = parse_val(path, key, v)?,
        "checkpoint_every" => cfg.checkpoint_every = parse_val(path, key, v)?,
        "code_init_sigma" => cfg.code_init_sigma = parse_val(path, key, v)?,
        _ => {
            if let Some(sub) = key.strip_prefix("weights.") {
                apply_weights_key(path, sub, key, v, &mut cfg.weights)?;
            } else if let Some(sub) = key.strip_prefix("sampler.") {
                apply_sampler_key(path, sub, key, v, &mut cfg.sampler)?;
            } else if let Some(sub) = key.strip_prefix("field.") {
                apply_field_key(path, sub, key, v, &mut cfg.field)?;
            } else {
                return Err(parse_err(path, format!("unknown config key '{key}'")));
            }
        }
    }
    Ok(())
}

pub(crate) fn apply_weights_key(
    path: &Path,
    sub: &str,
    key: &str,
    v: &str,
    w: &mut LossWeights,
) -> Result<(), IoError> {
    match sub {
        "surface" => w.surface = parse_val(path, key, v)?,
        "normal" => w.normal = parse_val(path, key, v)?,
        "eikonal" => w.eikonal = parse_val(path, key, v)?,
        "offsurface" => w.offsurface = parse_val(path, key, v)?,
        "code_reg" => w.code_reg = parse_val(path, key, v)?,
        "alpha" => w.alpha = parse_val(path, key, v)?,
        _ => return Err(parse_err(path, format!("unknown config key '{key}'"))),
    }
    Ok(())
}

pub(crate) fn apply_sampler_key(
    path: &Path,
    sub: &str,
    key: &str,
    v: &str,
    s: &mut SamplerConfig,
) -> Result<(), IoError> {
    match sub {
        "n_surface" => s.n_surface = parse_val(path, key, v)?,
        "n_offsurface" => s.n_offsurface = parse_val(path, key, v)?,
        "near_sigma_frac" => s.near_sigma_frac = parse_val(path, key, v)?,
        "volume_margin" => s.volume_margin = parse_val(path, key, v)?,
        _ => return Err(parse_err(path, format!("unknown config key '{key}'"))),
    }
    Ok(())
}

/// Applies one run-config pair onto a ReconConfig; unknown keys are
/// rejected.
pub fn apply_recon_key(
    path: &Path,
    key: &str,
    v: &str,
    cfg: &mut crate::reconstructor::ReconConfig,
) -> Result<(), IoError> {
    match key {
        "iterations" => cfg.iterations = parse_val(path, key, v)?,
        "learning_rate_codes" => cfg.learning_rate_codes = parse_val(path, key, v)?,
        "learning_rate_translation" => cfg.learning_rate_translation = parse_val(path, key, v)?,
        "learning_rate_rotation" => cfg.learning_rate_rotation = parse_val(path, key, v)?,
        "freeze_identity" => cfg.freeze_identity = parse_val(path, key, v)?,
        "freeze_pose" => cfg.freeze_pose = parse_val(path, key, v)?,
        "seed" => cfg.seed = parse_val(path, key, v)?,
        _ => {
            if let Some(sub) = key.strip_prefix("weights.") {
                apply_weights_key(path, sub, key, v, &mut cfg.weights)?;
            } else if let Some(sub) = key.strip_prefix("sampler.") {
                apply_sampler_key(path, sub, key, v, &mut cfg.sampler)?;
            } else {
                return Err(parse_err(path, format!("unknown config key '{key}'")));
            }
        }
    }
    Ok(())
}

/// Applies one `pg.`-stripped run-config pair onto a PgConfig.
pub fn apply_pg_key(
    path: &Path,
    key: &str,
    v: &str,
    cfg: &mut crate::pose_init::PgConfig,
) -> Result<(), IoError> {
    let full = format!("pg.{key}");
    match key {
        "n_actions" => cfg.n_actions = parse_val(path, &full, v)?,
        "samples_per_iter" => cfg.samples_per_iter = parse_val(path, &full, v)?,
        "inner_shape_steps" => cfg.inner_shape_steps = parse_val(path, &full, v)?,
        "eval_points" => cfg.eval_points = parse_val(path, &full, v)?,
        "code_lr" => cfg.code_lr = parse_val(path, &full, v)?,
        "policy_lr" => cfg.policy_lr = parse_val(path, &full, v)?,
        "max_iters" => cfg.max_iters = parse_val(path, &full, v)?,
        "converge_prob" => cfg.converge_prob = parse_val(path, &full, v)?,
        "std_mode" => cfg.std_mode = parse_val(path, &full, v)?,
        _ => return Err(parse_err(path, format!("unknown config key '{full}'"))),
    }
    Ok(())
}

/// Applies one `mhe.`-stripped run-config pair onto an MheConfig.
pub fn apply_mhe_key(
    path: &Path,
    key: &str,
    v: &str,
    cfg: &mut crate::pose_init::MheConfig,
) -> Result<(), IoError> {
    let full = format!("mhe.{key}");
    match key {
        "n_hypotheses" => cfg.n_hypotheses = parse_val(path, &full, v)?,
        "steps" => cfg.steps = parse_val(path, &full, v)?,
        "eval_points" => cfg.eval_points = parse_val(path, &full, v)?,
        "code_lr" => cfg.code_lr = parse_val(path, &full, v)?,
        _ => return Err(parse_err(path, format!("unknown config key '{full}'"))),
    }
    Ok(())
}

/// Applies one `track.`-stripped run-config pair onto a TrackConfig.
pub fn apply_track_key(
    path: &Path,
    key: &str,
    v: &str,
    cfg: &mut crate::reconstructor::TrackConfig,
) -> Result<(), IoError> {
    let full = format!("track.{key}");
    match key {
        "warm_iterations" => cfg.warm_iterations = parse_val(path, &full, v)?,
        "freeze_identity_after" => {
            cfg.freeze_identity_after = Some(parse_val(path, &full, v)?)
        }
        "identity_lr_ratio" => cfg.identity_lr_ratio = parse_val(path, &full, v)?,
        _ => return Err(parse_err(path, format!("unknown config key '{full}'"))),
    }
    Ok(())
}

/// Applies one run-config pair onto a PoseNetTrainConfig.
pub fn apply_posenet_key(
    path: &Path,
    key: &str,
    v: &str,
    cfg: &mut crate::pose_init::PoseNetTrainConfig,
) -> Result<(), IoError> {
    match key {
        "epochs" => cfg.epochs = parse_val(path, key, v)?,
        "learning_rate" => cfg.learning_rate = parse_val(path, key, v)?,
        "points" => cfg.points = parse_val(path, key, v)?,
        "code_sigma" => cfg.code_sigma = parse_val(path, key, v)?,
        "translation_extent" => cfg.translation_extent = parse_val(path, key, v)?,
        "mesh_resolution" => cfg.mesh_resolution = parse_val(path, key, v)?,
        "seed" => cfg.seed = parse_val(path, key, v)?,
        _ => return Err(parse_err(path, format!("unknown config key '{key}'"))),
    }
    Ok(())
}

fn apply_field_key(
    path: &Path,
    sub: &str,
    key: &str,
    v: &str,
    f: &mut FieldConfig,
) -> Result<(), IoError> {
    match sub {
        "pe_bands" => f.pe_bands = parse_val(path, key, v)?,
        "identity_dim" => f.identity_dim = parse_val(path, key, v)?,
        "deformation_dim" => f.deformation_dim = parse_val(path, key, v)?,
        "hidden_width" => f.hidden_width = parse_val(path, key, v)?,
        "n_layers" => f.n_layers = parse_val(path, key, v)?,
        "skip_layer" => f.skip_layer = parse_val(path, key, v)?,
        _ => return Err(parse_err(path, format!("unknown config key '{key}'"))),
    }
    Ok(())
}

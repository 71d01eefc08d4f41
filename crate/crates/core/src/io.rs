//! On-disk formats shared with the CLI: 8-bit PNG images, `cameras.json`,
//! scene/dataset directories, GOEM field checkpoints, token-network
//! checkpoints, flat key=value configs, and JSON-lines metric logs.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::fields::{Bounds, DecoderHead, DecoderSpec, FieldKind, FieldParams, FieldSpec};
use crate::geometry::CameraView;
use crate::image_buf::Image;
use crate::nn::Activation;
use crate::tokens::{TokenBackbone, TokenDenoiser};
use crate::training::{MetricRecord, Scene, SceneDataset};
use crate::{Error, Result};

// ---------------------------------------------------------------- images --

/// Writes an 8-bit RGB PNG; values are clamped to [0,1] and quantized at
/// 1/255.
pub fn write_png(path: &Path, image: &Image) -> Result<()> {
    let mut buf = Vec::with_capacity(image.data.len());
    for &v in &image.data {
        buf.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    let img: image::RgbImage =
        image::ImageBuffer::from_raw(image.width as u32, image.height as u32, buf)
            .expect("buffer matches dimensions");
    img.save(path).map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_png(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .map_err(|e| Error::format(path, e.to_string()))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.into_raw().iter().map(|&b| b as f64 / 255.0).collect();
    Image::from_data(w, h, data)
}

// --------------------------------------------------------- cameras.json --

/// One entry of `cameras.json`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CameraEntry {
    pub image: String,
    /// Row-major camera-to-world 4x4.
    pub cam2world: Vec<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub near: f64,
    pub far: f64,
}

pub fn save_cameras(path: &Path, entries: &[CameraEntry]) -> Result<()> {
    let json = serde_json::to_string_pretty(entries).expect("camera entries serialize");
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_cameras(path: &Path) -> Result<Vec<CameraEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Writes a scene directory: numbered PNGs plus `cameras.json`.
pub fn write_scene(dir: &Path, views: &[CameraView]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(views.len());
    for (i, view) in views.iter().enumerate() {
        let name = format!("{i:04}.png");
        write_png(&dir.join(&name), &view.image)?;
        entries.push(CameraEntry {
            image: name,
            cam2world: view.cam2world.to_vec(),
            fx: view.fx,
            fy: view.fy,
            cx: view.cx,
            cy: view.cy,
            near: view.near,
            far: view.far,
        });
    }
    save_cameras(&dir.join("cameras.json"), &entries)
}

/// Loads a scene directory written by [`write_scene`] (or hand-authored to
/// the same schema). Context/target splits are left empty.
pub fn load_scene(dir: &Path) -> Result<Scene> {
    let entries = load_cameras(&dir.join("cameras.json"))?;
    let mut views = Vec::with_capacity(entries.len());
    for entry in &entries {
        if entry.cam2world.len() != 16 {
            return Err(Error::format(
                dir.join("cameras.json"),
                format!("cam2world must have 16 entries, got {}", entry.cam2world.len()),
            ));
        }
        let mut cam2world = [0.0; 16];
        cam2world.copy_from_slice(&entry.cam2world);
        let view = CameraView {
            image: read_png(&dir.join(&entry.image))?,
            cam2world,
            fx: entry.fx,
            fy: entry.fy,
            cx: entry.cx,
            cy: entry.cy,
            near: entry.near,
            far: entry.far,
        };
        view.validate()?;
        views.push(view);
    }
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".into());
    Ok(Scene {
        name,
        views,
        context: Vec::new(),
        target: Vec::new(),
    })
}

/// Loads every subdirectory of `dir` as a scene, sorted by name.
pub fn load_dataset(dir: &Path) -> Result<SceneDataset> {
    let mut scene_dirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    scene_dirs.sort();
    if scene_dirs.is_empty() {
        return Err(Error::format(dir, "dataset directory has no scene subdirectories"));
    }
    let scenes = scene_dirs
        .iter()
        .map(|p| load_scene(p))
        .collect::<Result<Vec<_>>>()?;
    Ok(SceneDataset { scenes })
}

// ------------------------------------------------------ GOEM checkpoints --

const MAGIC: &[u8; 4] = b"GOEM";
const VERSION: u32 = 1;

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_f32s(buf: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n * 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(self.path, "trailing bytes after checkpoint"));
        }
        Ok(())
    }
}

fn kind_byte(spec: &FieldSpec) -> u8 {
    match spec.kind {
        FieldKind::Voxel { .. } => 0,
        FieldKind::Triplane { .. } => 1,
        FieldKind::Mlp { .. } => 2,
    }
}

fn spec_ints(spec: &FieldSpec) -> Vec<u32> {
    match &spec.kind {
        FieldKind::Voxel {
            resolution,
            channels,
        }
        | FieldKind::Triplane {
            resolution,
            channels,
        } => vec![*resolution as u32, *channels as u32],
        FieldKind::Mlp { hidden, activation } => {
            let mut v = vec![hidden.len() as u32];
            v.extend(hidden.iter().map(|&h| h as u32));
            v.push(activation.code());
            v
        }
    }
}

fn read_spec(reader: &mut Reader, kind: u8) -> Result<FieldSpec> {
    let kind = match kind {
        0 | 1 => {
            let resolution = reader.u32()? as usize;
            let channels = reader.u32()? as usize;
            if kind == 0 {
                FieldKind::Voxel {
                    resolution,
                    channels,
                }
            } else {
                FieldKind::Triplane {
                    resolution,
                    channels,
                }
            }
        }
        2 => {
            let n = reader.u32()? as usize;
            let hidden = (0..n).map(|_| reader.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            let activation = Activation::from_code(reader.u32()?)
                .ok_or_else(|| Error::format(reader.path, "unknown activation code"))?;
            FieldKind::Mlp { hidden, activation }
        }
        other => {
            return Err(Error::format(
                reader.path,
                format!("unknown field kind byte {other}"),
            ))
        }
    };
    Ok(FieldSpec {
        kind,
        bounds: Bounds::default(),
    })
}

/// GOEM binary checkpoint: magic, version u32 LE, kind u8, spec integers as
/// u32 LE, field params as f32 LE, then decoder spec integers and decoder
/// params likewise. Only default field bounds are representable.
pub fn save_checkpoint(path: &Path, params: &FieldParams, decoder: &DecoderHead) -> Result<()> {
    if !params.spec.bounds.is_default() {
        return Err(Error::Config(
            "checkpoint format only represents default field bounds".into(),
        ));
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    push_u32(&mut buf, VERSION);
    buf.push(kind_byte(&params.spec));
    for v in spec_ints(&params.spec) {
        push_u32(&mut buf, v);
    }
    push_f32s(&mut buf, &params.data);
    push_u32(&mut buf, decoder.spec.in_channels as u32);
    push_u32(&mut buf, decoder.spec.hidden as u32);
    push_u32(&mut buf, decoder.spec.use_direction as u32);
    push_f32s(&mut buf, &decoder.params);
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(FieldParams, DecoderHead)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut reader = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if reader.take(4)? != MAGIC {
        return Err(Error::format(path, "bad magic, not a GOEM checkpoint"));
    }
    let version = reader.u32()?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let kind = reader.u8()?;
    let spec = read_spec(&mut reader, kind)?;
    let data = reader.f32s(spec.parameter_count())?;
    let params = FieldParams::new(spec, data)?;

    let in_channels = reader.u32()? as usize;
    let hidden = reader.u32()? as usize;
    let use_direction = reader.u32()? != 0;
    let dspec = DecoderSpec::new(in_channels)
        .with_hidden(hidden)
        .with_direction(use_direction);
    let dparams = reader.f32s(dspec.parameter_count())?;
    reader.done()?;
    let decoder = DecoderHead::from_params(dspec, dparams)?;
    Ok((params, decoder))
}

// ----------------------------------------------- token-network checkpoints --

const TOKEN_MAGIC: &[u8; 4] = b"GOTK";

fn save_token_net(
    path: &Path,
    kind: u8,
    field_spec: &FieldSpec,
    token_dim: usize,
    hidden: usize,
    embed_dim: usize,
    params: &[f64],
) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(TOKEN_MAGIC);
    push_u32(&mut buf, VERSION);
    buf.push(kind);
    buf.push(kind_byte(field_spec));
    for v in spec_ints(field_spec) {
        push_u32(&mut buf, v);
    }
    push_u32(&mut buf, token_dim as u32);
    push_u32(&mut buf, hidden as u32);
    push_u32(&mut buf, embed_dim as u32);
    push_f32s(&mut buf, params);
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn load_token_net(path: &Path, expect_kind: u8) -> Result<(FieldSpec, usize, usize, usize, Vec<f64>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut reader = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if reader.take(4)? != TOKEN_MAGIC {
        return Err(Error::format(path, "bad magic, not a token-network checkpoint"));
    }
    let version = reader.u32()?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let net_kind = reader.u8()?;
    if net_kind != expect_kind {
        return Err(Error::format(path, "token-network kind mismatch"));
    }
    let field_kind = reader.u8()?;
    let field_spec = read_spec(&mut reader, field_kind)?;
    let token_dim = reader.u32()? as usize;
    let hidden = reader.u32()? as usize;
    let embed_dim = reader.u32()? as usize;
    let remaining = (reader.bytes.len() - reader.pos) / 4;
    let params = reader.f32s(remaining)?;
    reader.done()?;
    Ok((field_spec, token_dim, hidden, embed_dim, params))
}

pub fn save_denoiser(path: &Path, denoiser: &TokenDenoiser) -> Result<()> {
    save_token_net(
        path,
        0,
        &denoiser.field_spec,
        denoiser.token_dim,
        denoiser.hidden(),
        denoiser.embed_dim,
        &denoiser.params,
    )
}

pub fn load_denoiser(path: &Path) -> Result<TokenDenoiser> {
    let (spec, token_dim, hidden, embed_dim, params) = load_token_net(path, 0)?;
    let mut denoiser = TokenDenoiser::new(spec, token_dim, hidden, embed_dim, 0)?;
    if params.len() != denoiser.param_count() {
        return Err(Error::format(path, "denoiser parameter count mismatch"));
    }
    denoiser.params = params;
    Ok(denoiser)
}

pub fn save_backbone(path: &Path, backbone: &TokenBackbone) -> Result<()> {
    save_token_net(
        path,
        1,
        &backbone.field_spec,
        backbone.token_dim,
        backbone.hidden(),
        backbone.embed_dim,
        &backbone.params,
    )
}

pub fn load_backbone(path: &Path) -> Result<TokenBackbone> {
    let (spec, token_dim, hidden, embed_dim, params) = load_token_net(path, 1)?;
    let mut backbone = TokenBackbone::new(spec, token_dim, hidden, embed_dim, 0)?;
    if params.len() != backbone.param_count() {
        return Err(Error::format(path, "backbone parameter count mismatch"));
    }
    backbone.params = params;
    Ok(backbone)
}

// ----------------------------------------------------------- key=value --

/// Parses a flat `key=value` config; blank lines and `#` comments ignored.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("config line {} has no '=': {line}", lineno + 1))
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

pub fn load_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

// --------------------------------------------------------- metric logs --

pub fn write_metrics_jsonl(path: &Path, records: &[MetricRecord]) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(crate::training::records_to_jsonl(records).as_bytes())
        .map_err(|e| Error::io(path, e))
}

pub fn read_to_string(path: &Path) -> Result<String> {
    let mut s = String::new();
    std::fs::File::open(path)
        .map_err(|e| Error::io(path, e))?
        .read_to_string(&mut s)
        .map_err(|e| Error::io(path, e))?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::zero_origin;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    #[test]
    fn png_round_trip_is_quantization_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("img.png");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut img = Image::new(7, 5);
        for v in &mut img.data {
            *v = rng.gen_range(0.0..1.0);
        }
        write_png(&path, &img).unwrap();
        let back = read_png(&path).unwrap();
        assert_eq!(back.width, 7);
        assert_eq!(back.height, 5);
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
        // A second round trip is exact: quantization is idempotent.
        write_png(&path, &back).unwrap();
        let again = read_png(&path).unwrap();
        assert_eq!(back, again);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("field.goem");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = FieldSpec::triplane(4, 2);
        let mut params = zero_origin(&spec, 0).unwrap();
        for v in &mut params.data {
            *v = rng.gen_range(-1.0f32..1.0) as f64; // representable in f32
        }
        let decoder = DecoderHead::new(DecoderSpec::new(2).with_hidden(100), 3).unwrap();

        save_checkpoint(&path, &params, &decoder).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"GOEM");
        let (p2, d2) = load_checkpoint(&path).unwrap();
        assert_eq!(p2.spec, params.spec);
        assert_eq!(d2.spec, decoder.spec);
        for (a, b) in params.data.iter().zip(&p2.data) {
            assert_eq!(*a as f32, *b as f32);
        }
        // Save/load again: exact fixed point after one f32 round trip.
        let path2 = dir.path().join("field2.goem");
        save_checkpoint(&path2, &p2, &d2).unwrap();
        let (p3, d3) = load_checkpoint(&path2).unwrap();
        assert_eq!(p2.data, p3.data);
        assert_eq!(d2.params, d3.params);
    }

    #[test]
    fn checkpoint_mlp_kind() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("mlp.goem");
        let spec = FieldSpec::mlp(vec![16, 16], Activation::Tanh);
        let params = zero_origin(&spec, 9).unwrap();
        let decoder = DecoderHead::new(DecoderSpec::new(4), 0).unwrap();
        save_checkpoint(&path, &params, &decoder).unwrap();
        let (p2, _) = load_checkpoint(&path).unwrap();
        assert_eq!(p2.spec, spec);
        assert_eq!(p2.len(), params.len());
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.goem");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(load_checkpoint(&path).is_err());
        std::fs::write(&path, b"GOEM\x01\x00\x00\x00").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn scene_round_trip() {
        let dir = tempdir().unwrap();
        let scene_dir = dir.path().join("scene_0000");
        let ring = crate::datagen::CameraRing {
            n_views: 3,
            resolution: 8,
            ..Default::default()
        };
        let views = crate::datagen::hemisphere_cameras(&ring);
        write_scene(&scene_dir, &views).unwrap();

        assert!(scene_dir.join("0000.png").exists());
        assert!(scene_dir.join("0002.png").exists());
        let scene = load_scene(&scene_dir).unwrap();
        assert_eq!(scene.name, "scene_0000");
        assert_eq!(scene.views.len(), 3);
        for (a, b) in views.iter().zip(&scene.views) {
            assert_eq!(a.cam2world, b.cam2world);
            assert_eq!(a.fx, b.fx);
        }
    }

    #[test]
    fn config_parsing() {
        let cfg = parse_config("# comment\nsteps = 100\nlr=5e-5\n\nkind=cosine\n").unwrap();
        assert_eq!(cfg["steps"], "100");
        assert_eq!(cfg["lr"], "5e-5");
        assert_eq!(cfg["kind"], "cosine");
        assert!(parse_config("not-a-pair\n").is_err());
    }

    #[test]
    fn token_net_round_trips() {
        let dir = tempdir().unwrap();
        let spec = FieldSpec::triplane(4, 2);
        let den = TokenDenoiser::new(spec.clone(), 8, 16, 8, 4).unwrap();
        let path = dir.path().join("denoiser.gotk");
        save_denoiser(&path, &den).unwrap();
        let back = load_denoiser(&path).unwrap();
        assert_eq!(back.param_count(), den.param_count());
        for (a, b) in den.params.iter().zip(&back.params) {
            assert_eq!(*a as f32, *b as f32);
        }
        assert!(load_backbone(&path).is_err()); // kind mismatch

        let bb = TokenBackbone::new(spec, 8, 16, 8, 4).unwrap();
        let path2 = dir.path().join("backbone.gotk");
        save_backbone(&path2, &bb).unwrap();
        let back = load_backbone(&path2).unwrap();
        assert_eq!(back.param_count(), bb.param_count());
    }
}

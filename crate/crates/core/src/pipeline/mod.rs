//! File-level commands behind the `meshboost` binary.
//!
//! Every command validates its inputs and runs all computation in memory
//! before it creates the output directory, so a failing command leaves no
//! partial output tree behind.

mod render;
mod synth;
mod training;

use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::inpaint::{residual_black, unet_inpaint, InpaintNet, MaskedImage, NEAR_BLACK};
use crate::mesh::{load_obj, rasterize_background_mask, save_obj, Mask};
use crate::shape::{complete_shape, refine_latent, RefineConfig, ShapeModel};
use crate::texture::{apply_masks_to_image, derive_masks, transfer_texture, MaskPair, TransferConfig};
use crate::{Error, Mesh, Result, TextureAtlas, TexturedMesh};

pub use render::{render, Camera, RenderConfig};
pub use synth::{cmd_synth, SynthConfig};
pub use training::{cmd_train_inpaint, cmd_train_shape, TrainInpaintConfig, TrainShapeConfig};

/// Encoder sample count used when neither the config nor the model names one.
const DEFAULT_ENCODER_POINTS: usize = 2048;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelPaths {
    pub shape: Option<PathBuf>,
    pub inpaint: Option<PathBuf>,
}

/// Everything a command needs besides its file arguments. The master `seed`
/// overrides the seeds of every section (see [`Config::resolved`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub models: ModelPaths,
    /// Encoder input size; defaults to the value the shape model was trained with.
    pub encoder_points: Option<usize>,
    pub refine: RefineConfig,
    pub transfer: TransferConfig,
    /// Foreground texels with every channel at or below this value are missing.
    pub black_threshold: u8,
    pub synth: SynthConfig,
    pub render: RenderConfig,
    pub train_shape: TrainShapeConfig,
    pub train_inpaint: TrainInpaintConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            models: ModelPaths::default(),
            encoder_points: None,
            refine: RefineConfig::default(),
            transfer: TransferConfig::default(),
            black_threshold: 0,
            synth: SynthConfig::default(),
            render: RenderConfig::default(),
            train_shape: TrainShapeConfig::default(),
            train_inpaint: TrainInpaintConfig::default(),
        }
    }
}

impl Config {
    /// Parses a JSON config. Relative model paths are taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::invalid(format!("config not found: {}", path.display())),
            _ => Error::io(path, e),
        })?;
        let mut cfg: Config = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.models.shape, &mut cfg.models.inpaint].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Copy with every section seed derived from the master seed.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.refine.seed = self.seed;
        c.synth.seed = self.seed;
        c.train_shape.train.seed = self.seed;
        c.train_shape.dataset_seed = self.seed ^ 0xDA7A;
        c.train_inpaint.train.seed = self.seed;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.refine.validate()?;
        self.transfer.validate()?;
        if self.encoder_points == Some(0) {
            return Err(Error::invalid("encoder_points must be positive"));
        }
        self.synth.validate()?;
        self.train_shape.train.validate()?;
        self.train_inpaint.validate()?;
        Ok(())
    }

    fn shape_model(&self) -> Result<ShapeModel<f32>> {
        let path = self
            .models
            .shape
            .as_ref()
            .ok_or_else(|| Error::invalid("no shape model configured (models.shape)"))?;
        require_file(path, "shape model")?;
        ShapeModel::load(path, None)
    }

    fn inpaint_model(&self) -> Result<InpaintNet<f32>> {
        let path = self
            .models
            .inpaint
            .as_ref()
            .ok_or_else(|| Error::invalid("no inpainting model configured (models.inpaint)"))?;
        require_file(path, "inpainting model")?;
        InpaintNet::load(path, None)
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} not found: {}", path.display())))
    }
}

/// A file produced by a command, held in memory until the command succeeds.
#[derive(Clone, Debug)]
pub enum Artifact {
    /// OBJ with an optional texture written as `<stem>.mtl` and `<stem>.png`.
    Obj(Mesh, Option<TextureAtlas>),
    Atlas(TextureAtlas),
    Mask(Mask),
    Image(RgbImage),
    Json(Value),
    Text(String),
}

/// Output files keyed by path relative to the output directory.
#[derive(Clone, Debug, Default)]
pub struct Outputs {
    pub files: Vec<(String, Artifact)>,
}

impl Outputs {
    pub fn push(&mut self, name: impl Into<String>, a: Artifact) {
        self.files.push((name.into(), a));
    }

    pub fn extend(&mut self, other: Outputs) {
        self.files.extend(other.files);
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        for (name, a) in &self.files {
            let path = dir.join(name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            match a {
                Artifact::Obj(mesh, atlas) => save_obj(&path, mesh, atlas.as_ref())?,
                Artifact::Atlas(atlas) => atlas.save_png(&path)?,
                Artifact::Mask(mask) => mask.save_png(&path)?,
                Artifact::Image(img) => img.save(&path)?,
                Artifact::Json(v) => write_json(&path, v)?,
                Artifact::Text(s) => fs::write(&path, s).map_err(|e| Error::io(&path, e))?,
            }
        }
        Ok(())
    }
}

pub(crate) fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Result of the shape stage.
#[derive(Clone, Debug)]
pub struct Completion {
    /// Refined estimate with template UVs.
    pub mesh: Mesh,
    pub z0: Vec<f64>,
    pub z: Vec<f64>,
    pub report: Value,
}

pub fn stage_complete(model: &ShapeModel<f32>, partial: &Mesh, cfg: &Config) -> Result<Completion> {
    let n = cfg
        .encoder_points
        .or(model.training.as_ref().map(|t| t.encoder_points))
        .unwrap_or(DEFAULT_ENCODER_POINTS);
    let (_, z0) = complete_shape(model, partial, n, cfg.refine.seed)?;
    let out = refine_latent(model, partial, &z0, &cfg.refine)?;
    let report = json!({
        "stage": "complete",
        "objective": cfg.refine.objective,
        "encoder_points": n,
        "initial_objective": out.initial_objective,
        "refined_objective": out.objective,
        "best_iteration": out.best_iteration,
        "iterations_run": out.iterations_run,
        "vertices": out.mesh.n_vertices(),
        "faces": out.mesh.n_faces(),
    });
    Ok(Completion {
        mesh: out.mesh,
        z0,
        z: out.z,
        report,
    })
}

pub fn stage_transfer(source: &TexturedMesh, completed: &Mesh, cfg: &Config) -> Result<(TextureAtlas, Value)> {
    let target = completed.compute_vertex_normals()?;
    let atlas = transfer_texture(source, &target, &cfg.transfer)?;
    let fg = rasterize_background_mask(completed, atlas.width(), atlas.height())?;
    let mut hits = 0;
    for row in 0..atlas.height() {
        for col in 0..atlas.width() {
            if fg.get(row, col) && atlas.get(row, col) != [0, 0, 0] {
                hits += 1;
            }
        }
    }
    let report = json!({
        "stage": "transfer",
        "width": atlas.width(),
        "height": atlas.height(),
        "foreground_texels": fg.count_ones(),
        "transferred_texels": hits,
    });
    Ok((atlas, report))
}

pub fn stage_mask(atlas: &TextureAtlas, completed: &Mesh, cfg: &Config) -> Result<(MaskPair, Value)> {
    let fg = rasterize_background_mask(completed, atlas.width(), atlas.height())?;
    let masks = derive_masks(atlas, &fg, cfg.black_threshold)?;
    let report = json!({
        "stage": "mask",
        "foreground_texels": masks.foreground.count_ones(),
        "missing_texels": masks.missing_count(),
        "black_threshold": cfg.black_threshold,
    });
    Ok((masks, report))
}

pub fn stage_inpaint(net: &InpaintNet<f32>, atlas: &TextureAtlas, masks: &MaskPair) -> Result<(TextureAtlas, Value)> {
    let x = MaskedImage::from_atlas(atlas, masks)?;
    let out = unet_inpaint(net, &x)?;
    let report = json!({
        "stage": "inpaint",
        "filled_texels": masks.missing_count(),
        "residual_black_texels": residual_black(&out, masks, NEAR_BLACK),
        "near_black_threshold": NEAR_BLACK,
    });
    Ok((out, report))
}

fn load_mesh(path: &Path) -> Result<Mesh> {
    require_file(path, "mesh")?;
    Ok(load_obj(path)?.mesh)
}

fn load_uv_mesh(path: &Path) -> Result<Mesh> {
    let mesh = load_mesh(path)?;
    if mesh.corner_uvs.is_none() {
        return Err(Error::invalid(format!("{} has no texture coordinates", path.display())));
    }
    Ok(mesh)
}

fn load_textured(path: &Path) -> Result<TexturedMesh> {
    require_file(path, "mesh")?;
    load_obj(path)?.into_textured()
}

fn load_atlas(path: &Path) -> Result<TextureAtlas> {
    require_file(path, "atlas")?;
    TextureAtlas::load_png(path)
}

fn complete_outputs(c: &Completion) -> Outputs {
    let mut o = Outputs::default();
    o.push("completed.obj", Artifact::Obj(c.mesh.clone(), None));
    o.push("latent.json", Artifact::Json(json!({ "z0": c.z0, "z": c.z })));
    o.push("complete_report.json", Artifact::Json(c.report.clone()));
    o
}

fn transfer_outputs(atlas: &TextureAtlas, report: &Value) -> Outputs {
    let mut o = Outputs::default();
    o.push("transferred.png", Artifact::Atlas(atlas.clone()));
    o.push("transfer_report.json", Artifact::Json(report.clone()));
    o
}

fn mask_outputs(atlas: &TextureAtlas, masks: &MaskPair, report: &Value) -> Result<Outputs> {
    let mut o = Outputs::default();
    o.push("known_mask.png", Artifact::Mask(masks.known.clone()));
    o.push("background_mask.png", Artifact::Mask(masks.foreground.clone()));
    o.push("masked_preview.png", Artifact::Image(apply_masks_to_image(atlas, masks)?));
    o.push("mask_report.json", Artifact::Json(report.clone()));
    Ok(o)
}

fn inpaint_outputs(atlas: &TextureAtlas, report: &Value) -> Outputs {
    let mut o = Outputs::default();
    o.push("inpainted.png", Artifact::Atlas(atlas.clone()));
    o.push("inpaint_report.json", Artifact::Json(report.clone()));
    o
}

/// Shape completion of a partial OBJ: writes `completed.obj`, `latent.json`
/// and `complete_report.json`.
pub fn cmd_complete(input: &Path, out: &Path, cfg: &Config) -> Result<Value> {
    cfg.validate()?;
    let partial = load_mesh(input)?;
    let model = cfg.shape_model()?;
    let c = stage_complete(&model, &partial, cfg)?;
    complete_outputs(&c).write(out)?;
    Ok(c.report)
}

/// Texture transfer from a textured partial OBJ onto a completed OBJ with UVs.
pub fn cmd_transfer(source: &Path, completed: &Path, out: &Path, cfg: &Config) -> Result<Value> {
    cfg.validate()?;
    let source = load_textured(source)?;
    let target = load_uv_mesh(completed)?;
    let (atlas, report) = stage_transfer(&source, &target, cfg)?;
    transfer_outputs(&atlas, &report).write(out)?;
    Ok(report)
}

/// Known and background masks of a transferred atlas on its mesh.
pub fn cmd_mask(atlas: &Path, completed: &Path, out: &Path, cfg: &Config) -> Result<Value> {
    cfg.validate()?;
    let atlas = load_atlas(atlas)?;
    let mesh = load_uv_mesh(completed)?;
    let (masks, report) = stage_mask(&atlas, &mesh, cfg)?;
    mask_outputs(&atlas, &masks, &report)?.write(out)?;
    Ok(report)
}

/// Inpaints an atlas given its known and background mask PNGs.
pub fn cmd_inpaint(atlas: &Path, known: &Path, background: &Path, out: &Path, cfg: &Config) -> Result<Value> {
    cfg.validate()?;
    let atlas = load_atlas(atlas)?;
    require_file(known, "known mask")?;
    require_file(background, "background mask")?;
    let masks = MaskPair {
        known: Mask::load_png(known)?,
        foreground: Mask::load_png(background)?,
    };
    let net = cfg.inpaint_model()?;
    let (result, report) = stage_inpaint(&net, &atlas, &masks)?;
    inpaint_outputs(&result, &report).write(out)?;
    Ok(report)
}

/// All stages in memory; the returned outputs hold every per-stage artifact
/// plus the textured `result.obj` and `pipeline_report.json`.
pub fn run_pipeline(partial: &TexturedMesh, shape: &ShapeModel<f32>, net: &InpaintNet<f32>, cfg: &Config) -> Result<(Outputs, Value)> {
    let c = stage_complete(shape, &partial.mesh, cfg)?;
    let (transferred, t_report) = stage_transfer(partial, &c.mesh, cfg)?;
    let (masks, m_report) = stage_mask(&transferred, &c.mesh, cfg)?;
    let (inpainted, i_report) = stage_inpaint(net, &transferred, &masks)?;
    let report = json!({
        "seed": cfg.seed,
        "complete": c.report,
        "transfer": t_report,
        "mask": m_report,
        "inpaint": i_report,
    });
    let mut o = complete_outputs(&c);
    o.extend(transfer_outputs(&transferred, &t_report));
    o.extend(mask_outputs(&transferred, &masks, &m_report)?);
    o.extend(inpaint_outputs(&inpainted, &i_report));
    o.push("result.obj", Artifact::Obj(c.mesh.clone(), Some(inpainted)));
    o.push("pipeline_report.json", Artifact::Json(report.clone()));
    Ok((o, report))
}

/// Completion, transfer, masking and inpainting of one textured partial OBJ.
pub fn cmd_pipeline(input: &Path, out: &Path, cfg: &Config) -> Result<Value> {
    cfg.validate()?;
    let partial = load_textured(input)?;
    let shape = cfg.shape_model()?;
    let net = cfg.inpaint_model()?;
    let (outputs, report) = run_pipeline(&partial, &shape, &net, cfg)?;
    outputs.write(out)?;
    Ok(report)
}

/// Preview render of an OBJ (textured when it references a texture).
pub fn cmd_render(input: &Path, out: &Path, cfg: &Config) -> Result<Value> {
    require_file(input, "mesh")?;
    let loaded = load_obj(input)?;
    let img = render(&loaded.mesh, loaded.atlas.as_ref(), &cfg.render)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save(out)?;
    Ok(json!({
        "camera": cfg.render.camera,
        "size": cfg.render.size,
        "textured": loaded.atlas.is_some(),
    }))
}

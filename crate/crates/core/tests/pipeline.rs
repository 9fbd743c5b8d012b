mod common;

use std::fs;

use common::{partial_scan, tiny_setup, tree, write_scan};
use image::RgbImage;
use meshboost::mesh::{load_obj, save_obj, Mask};
use meshboost::pipeline::{
    cmd_complete, cmd_inpaint, cmd_mask, cmd_pipeline, cmd_render, cmd_synth, cmd_train_inpaint, cmd_train_shape,
    cmd_transfer, render, Camera, Config, RenderConfig,
};
use meshboost::{Error, Mesh, TextureAtlas, Vec3};
use serde_json::Value;

fn read_json(p: &std::path::Path) -> Value {
    serde_json::from_slice(&fs::read(p).unwrap()).unwrap()
}

#[test]
fn pipeline_is_deterministic_and_equals_stage_chaining() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny_setup(d.path());
    let input = write_scan(d.path(), &partial_scan(11, 64));

    let (a, b) = (d.path().join("a"), d.path().join("b"));
    let report = cmd_pipeline(&input, &a, &cfg).unwrap();
    cmd_pipeline(&input, &b, &cfg).unwrap();
    let ta = tree(&a);
    assert_eq!(ta, tree(&b));
    for f in ["completed.obj", "transferred.png", "known_mask.png", "background_mask.png", "inpainted.png", "result.obj", "result.png", "pipeline_report.json"] {
        assert!(ta.contains_key(f), "missing {f}");
    }
    let c = &report["complete"];
    assert!(c["refined_objective"].as_f64().unwrap() <= c["initial_objective"].as_f64().unwrap());

    let s = d.path().join("stages");
    cmd_complete(&input, &s.join("1"), &cfg).unwrap();
    let completed = s.join("1/completed.obj");
    cmd_transfer(&input, &completed, &s.join("2"), &cfg).unwrap();
    cmd_mask(&s.join("2/transferred.png"), &completed, &s.join("3"), &cfg).unwrap();
    cmd_inpaint(&s.join("2/transferred.png"), &s.join("3/known_mask.png"), &s.join("3/background_mask.png"), &s.join("4"), &cfg).unwrap();
    let mut chained = tree(&s.join("1"));
    for k in ["2", "3", "4"] {
        chained.extend(tree(&s.join(k)));
    }
    for (name, bytes) in &chained {
        assert_eq!(Some(bytes), ta.get(name), "{name} differs from the monolithic run");
    }
}

#[test]
fn missing_count_matches_pixel_scan() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny_setup(d.path());
    let input = write_scan(d.path(), &partial_scan(12, 64));
    let out = d.path().join("out");
    let report = cmd_pipeline(&input, &out, &cfg).unwrap();

    let atlas = TextureAtlas::load_png(&out.join("transferred.png")).unwrap();
    let fg = Mask::load_png(&out.join("background_mask.png")).unwrap();
    let mut missing = 0;
    for r in 0..atlas.height() {
        for c in 0..atlas.width() {
            if fg.get(r, c) && atlas.get(r, c) == [0, 0, 0] {
                missing += 1;
            }
        }
    }
    assert!(missing > 0);
    assert_eq!(report["mask"]["missing_texels"].as_u64().unwrap() as usize, missing);
    assert_eq!(read_json(&out.join("mask_report.json"))["missing_texels"], report["mask"]["missing_texels"]);
}

#[test]
fn inpaint_with_nothing_missing_is_passthrough() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny_setup(d.path());
    let atlas = TextureAtlas::from_image(RgbImage::from_fn(64, 64, |x, y| image::Rgb([x as u8 * 3, y as u8 * 3, 90]))).unwrap();
    let p = |n: &str| d.path().join(n);
    atlas.save_png(&p("a.png")).unwrap();
    Mask::filled(64, 64, true).save_png(&p("known.png")).unwrap();
    Mask::filled(64, 64, true).save_png(&p("fg.png")).unwrap();
    let report = cmd_inpaint(&p("a.png"), &p("known.png"), &p("fg.png"), &p("out"), &cfg).unwrap();
    assert_eq!(report["filled_texels"], 0);
    assert_eq!(fs::read(p("a.png")).unwrap(), fs::read(p("out/inpainted.png")).unwrap());
}

#[test]
fn failing_commands_write_nothing() {
    let d = tempfile::tempdir().unwrap();
    let mut cfg = tiny_setup(d.path());
    let input = write_scan(d.path(), &partial_scan(13, 64));
    let out = d.path().join("out");

    let e = cmd_pipeline(&d.path().join("absent.obj"), &out, &cfg).unwrap_err();
    assert_eq!(e.exit_code(), 2);
    fs::write(d.path().join("garbage.obj"), "v 0 0 0\nf 1 2 9\n").unwrap();
    assert_eq!(cmd_pipeline(&d.path().join("garbage.obj"), &out, &cfg).unwrap_err().exit_code(), 2);

    let mut bad = cfg.clone();
    bad.transfer.max_ray_distance = -1.0;
    assert_eq!(cmd_pipeline(&input, &out, &bad).unwrap_err().exit_code(), 2);

    fs::write(d.path().join("junk.w3b"), b"not weights").unwrap();
    cfg.models.inpaint = Some(d.path().join("junk.w3b"));
    assert_eq!(cmd_pipeline(&input, &out, &cfg).unwrap_err().exit_code(), 3);

    cfg.models.inpaint = cfg.models.shape.clone();
    assert!(matches!(cmd_pipeline(&input, &out, &cfg).unwrap_err(), Error::ModelMismatch(_)));
    assert!(!out.exists());
}

#[test]
fn config_round_trips_and_rejects_unknown_keys() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path().join("c.json");
    let mut cfg = Config::default();
    cfg.seed = 9;
    cfg.models.shape = Some("models/s.w3b".into());
    fs::write(&p, serde_json::to_string(&cfg).unwrap()).unwrap();
    let back = Config::load(&p).unwrap();
    assert_eq!(back.seed, 9);
    assert_eq!(back.models.shape.unwrap(), d.path().join("models/s.w3b"));
    let r = Config { seed: 4, ..Config::default() }.resolved();
    assert_eq!((r.refine.seed, r.synth.seed, r.train_inpaint.train.seed), (4, 4, 4));

    fs::write(&p, r#"{"sed": 1}"#).unwrap();
    assert_eq!(Config::load(&p).unwrap_err().exit_code(), 2);
    fs::write(&p, "{").unwrap();
    assert!(matches!(Config::load(&p).unwrap_err(), Error::Parse { .. }));
}

#[test]
fn synth_splits_and_regeneration() {
    let d = tempfile::tempdir().unwrap();
    let mut cfg = Config::default();
    cfg.synth.train = 3;
    cfg.synth.val = 1;
    cfg.synth.eval = 2;
    cfg.synth.atlas_size = 32;
    let cfg = cfg.resolved();
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    cmd_synth(&a, &cfg).unwrap();
    cmd_synth(&b, &cfg).unwrap();
    let ta = tree(&a);
    assert_eq!(ta, tree(&b));

    let m = read_json(&a.join("manifest.json"));
    for (split, n) in [("train", 3), ("val", 1), ("eval", 2)] {
        assert_eq!(m["splits"][split].as_array().unwrap().len(), n);
    }
    for case in m["splits"]["eval"].as_array().unwrap() {
        assert!(case.get("complete").is_none());
    }
    assert!(ta.keys().filter(|k| k.starts_with("eval/")).all(|k| k.contains("partial.")));
    let case = &m["splits"]["train"][0];
    let complete = load_obj(&a.join(case["complete"].as_str().unwrap())).unwrap();
    let partial = load_obj(&a.join(case["partial"].as_str().unwrap())).unwrap();
    assert!(partial.mesh.n_faces() < complete.mesh.n_faces());
    assert!(partial.atlas.is_some() && complete.atlas.is_some());
}

fn unit_quad(uv: bool) -> Mesh {
    let m = Mesh::new(
        vec![Vec3::new(-1.0, -1.0, 0.0), Vec3::new(1.0, -1.0, 0.0), Vec3::new(1.0, 1.0, 0.0), Vec3::new(-1.0, 1.0, 0.0)],
        vec![[0, 1, 2], [0, 2, 3]],
    )
    .unwrap();
    if !uv {
        return m;
    }
    m.with_uvs(vec![[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]], [[0.0, 0.0], [1.0, 1.0], [0.0, 1.0]]]).unwrap()
}

#[test]
fn front_facing_quad_shows_its_texture() {
    let atlas = TextureAtlas::from_image(RgbImage::from_fn(5, 5, |x, y| image::Rgb([40 * x as u8, 40 * y as u8, 200]))).unwrap();
    let n = 97u32;
    let img = render(&unit_quad(true), Some(&atlas), &RenderConfig { size: n, ..RenderConfig::default() }).unwrap();
    let scale = 0.9 * n as f64 / 2.0;
    let mut checked = 0;
    for py in 0..n {
        for px in 0..n {
            let x = (px as f64 + 0.5 - n as f64 / 2.0) / scale;
            let y = (n as f64 / 2.0 - py as f64 - 0.5) / scale;
            let uv = [(x + 1.0) / 2.0, (y + 1.0) / 2.0];
            let inside = uv.iter().all(|&t| t > 1e-6 && t < 1.0 - 1e-6);
            let near_texel_edge = uv.iter().any(|&t| ((t * 5.0) - (t * 5.0).round()).abs() < 1e-6);
            if !inside || near_texel_edge {
                continue;
            }
            assert_eq!(img.get_pixel(px, py).0, atlas.sample_nearest(uv), "pixel ({px}, {py})");
            checked += 1;
        }
    }
    assert!(checked > 5000);
}

#[test]
fn untextured_render_is_gray_and_reproducible() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path().join("q.obj");
    let mut quad = unit_quad(false);
    quad.vertices[2].z = 0.5;
    save_obj(&p, &quad, None).unwrap();
    let mut cfg = Config::default();
    cfg.render.size = 64;
    cmd_render(&p, &d.path().join("a.png"), &cfg).unwrap();
    cmd_render(&p, &d.path().join("b.png"), &cfg).unwrap();
    assert_eq!(fs::read(d.path().join("a.png")).unwrap(), fs::read(d.path().join("b.png")).unwrap());
    let img = image::open(d.path().join("a.png")).unwrap().to_rgb8();
    let center = img.get_pixel(32, 32).0;
    assert!(center[0] == center[1] && center[1] == center[2] && center[0] > 0 && center[0] < 255);
    assert_eq!(img.get_pixel(0, 0).0, RenderConfig::default().background);

    let side = render(&unit_quad(false), None, &RenderConfig { size: 32, camera: Camera::Left, ..RenderConfig::default() }).unwrap();
    assert!(side.pixels().all(|p| p.0 == RenderConfig::default().background), "an edge-on quad covers no pixel centre");
    assert_eq!("up".parse::<Camera>().unwrap_err().exit_code(), 2);
}

fn tiny_training_config() -> Config {
    let mut cfg = Config::default();
    let s = &mut cfg.train_shape;
    s.arch = meshboost::shape::ShapeArch::with_sizes(8, &[3, 16], &[16], &[16]);
    s.train_shapes = 6;
    s.val_shapes = 2;
    s.train.epochs = 3;
    s.train.batch_size = 3;
    s.train.encoder_points = 128;
    s.train.eval_samples = 128;
    s.train.target_vertices = 64;
    let i = &mut cfg.train_inpaint;
    i.arch.channels = vec![4, 8];
    i.train.iterations = 4;
    i.train.batch_size = 2;
    i.train.corpus = meshboost::inpaint::Corpus::generic(16, 16);
    i.checkpoint_every = 1;
    cfg.resolved()
}

#[test]
fn shape_training_resumes_bitwise() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny_training_config();
    let full = d.path().join("full");
    let summary = cmd_train_shape(&full, &cfg, None).unwrap();
    assert!(summary["summary"]["tau_train"].as_f64().unwrap() > 0.0);
    let csv = fs::read_to_string(full.join("training.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3);

    let mut short = cfg.clone();
    short.train_shape.train.epochs = 1;
    let part = d.path().join("part");
    cmd_train_shape(&part, &short, None).unwrap();
    let resumed = d.path().join("resumed");
    cmd_train_shape(&resumed, &cfg, Some(&part.join("checkpoint.w3b"))).unwrap();
    assert_eq!(tree(&full), tree(&resumed));
}

#[test]
fn inpaint_training_resumes_bitwise() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny_training_config();
    let full = d.path().join("full");
    cmd_train_inpaint(&full, &cfg, None).unwrap();
    let csv = fs::read_to_string(full.join("training.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);

    let mut short = cfg.clone();
    short.train_inpaint.train.iterations = 2;
    let part = d.path().join("part");
    cmd_train_inpaint(&part, &short, None).unwrap();
    let resumed = d.path().join("resumed");
    cmd_train_inpaint(&resumed, &cfg, Some(&part.join("checkpoint.w3b"))).unwrap();
    assert_eq!(tree(&full), tree(&resumed));
}

#[test]
fn divergence_names_the_last_good_checkpoint() {
    let d = tempfile::tempdir().unwrap();
    let mut cfg = tiny_training_config();
    cfg.train_inpaint.train.optimizer = meshboost::nn::OptimConfig::sgd(1e30, 0.0);
    cfg.train_inpaint.train.iterations = 20;
    let out = d.path().join("run");
    let e = cmd_train_inpaint(&out, &cfg, None).unwrap_err();
    assert_eq!(e.exit_code(), 4);
    let msg = e.to_string();
    assert!(msg.contains("last good checkpoint") && msg.contains("checkpoint.w3b"), "{msg}");
    assert!(out.join("checkpoint.w3b").is_file());
}

use meshboost::mesh::body::{body_texture, generate_synthetic_body, BodyParams, BodyResolution};
use meshboost::mesh::{rasterize_background_mask, Mask, TextureAtlas};
use meshboost::texture::{apply_masks_to_image, derive_masks, transfer_texture, MaskPair, TransferConfig, BACKGROUND_GRAY, MISSING_WHITE};
use meshboost::{Mesh, TexturedMesh, Vec3};
use image::{Rgb, RgbImage};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn body(seed: u64) -> Mesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_synthetic_body(&BodyParams::sample(&mut rng, BodyResolution::default())).unwrap()
}

fn cfg(size: u32) -> TransferConfig {
    TransferConfig {
        width: size,
        height: size,
        ..TransferConfig::default()
    }
}

fn keep_faces(m: &Mesh, keep: impl Fn(usize) -> bool) -> Mesh {
    let ids: Vec<usize> = (0..m.n_faces()).filter(|&f| keep(f)).collect();
    let uvs = m.corner_uvs.as_ref().unwrap();
    Mesh::new(m.vertices.clone(), ids.iter().map(|&f| m.faces[f]).collect())
        .unwrap()
        .with_uvs(ids.iter().map(|&f| uvs[f]).collect())
        .unwrap()
}

fn white(size: u32) -> TextureAtlas {
    TextureAtlas::from_image(RgbImage::from_pixel(size, size, Rgb([255, 255, 255]))).unwrap()
}

#[test]
fn identity_transfer_reproduces_the_texture() {
    let size = 128;
    let m = body(4);
    let atlas = body_texture(BodyResolution::default(), size, size, 9).unwrap();
    let source = TexturedMesh::new(m.clone(), atlas.clone()).unwrap();
    let target = m.compute_vertex_normals().unwrap();
    let out = transfer_texture(&source, &target, &cfg(size)).unwrap();
    let fg = rasterize_background_mask(&target, size, size).unwrap();
    let (mut close, mut total) = (0, 0);
    for r in 0..size {
        for c in 0..size {
            if fg.get(r, c) {
                total += 1;
                let (a, b) = (out.get(r, c), atlas.get(r, c));
                close += (0..3).all(|k| a[k].abs_diff(b[k]) <= 2) as usize;
            } else {
                assert_eq!(out.get(r, c), [0, 0, 0]);
            }
        }
    }
    assert!(close as f64 >= 0.99 * total as f64, "{close}/{total}");
}

#[test]
fn distant_geometry_does_not_change_the_transfer() {
    let size = 64;
    let m = body(5);
    let atlas = white(size);
    let target = m.compute_vertex_normals().unwrap();
    let base = transfer_texture(&TexturedMesh::new(m.clone(), atlas.clone()).unwrap(), &target, &cfg(size)).unwrap();
    let n = m.n_vertices() as u32;
    let mut v = m.vertices.clone();
    v.extend([Vec3::new(10.0, 0.0, 0.0), Vec3::new(10.0, 1.0, 0.0), Vec3::new(10.0, 0.0, 1.0)]);
    let mut f = m.faces.clone();
    f.push([n, n + 1, n + 2]);
    let mut uvs = m.corner_uvs.clone().unwrap();
    uvs.push([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
    let far = Mesh::new(v, f).unwrap().with_uvs(uvs).unwrap();
    let moved = transfer_texture(&TexturedMesh::new(far, atlas).unwrap(), &target, &cfg(size)).unwrap();
    assert_eq!(base, moved);
}

#[test]
fn apply_masks_examples() {
    let atlas = TextureAtlas::from_image(RgbImage::from_fn(3, 2, |c, r| Rgb([c as u8 * 50, r as u8 * 90, 7]))).unwrap();
    let all = MaskPair {
        known: Mask::filled(3, 2, true),
        foreground: Mask::filled(3, 2, true),
    };
    assert_eq!(&apply_masks_to_image(&atlas, &all).unwrap(), &atlas.image);

    let missing = MaskPair {
        known: Mask::filled(3, 2, false),
        foreground: Mask::filled(3, 2, true),
    };
    let img = apply_masks_to_image(&atlas, &missing).unwrap();
    assert!(img.pixels().all(|p| p.0 == MISSING_WHITE));
    assert_eq!(img.dimensions(), (3, 2));

    let bg = MaskPair {
        known: Mask::filled(3, 2, true),
        foreground: Mask::filled(3, 2, false),
    };
    assert!(apply_masks_to_image(&atlas, &bg).unwrap().pixels().all(|p| p.0 == BACKGROUND_GRAY));

    let again = TextureAtlas::from_image(img).unwrap();
    assert_eq!(apply_masks_to_image(&again, &missing).unwrap(), again.image);
    assert!(apply_masks_to_image(&atlas, &MaskPair { known: Mask::filled(2, 3, true), ..all }).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn missing_texels_lie_in_the_foreground(seed in any::<u64>(), w in 1u32..12, h in 1u32..12, threshold in any::<u8>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = RgbImage::from_fn(w, h, |_, _| Rgb([0, 1, 2].map(|_| if rng.gen() { rng.gen_range(0..40) } else { rng.gen() })));
        let atlas = TextureAtlas::from_image(img).unwrap();
        let fg = Mask::from_vec(w, h, (0..w * h).map(|_| rng.gen()).collect()).unwrap();
        let masks = derive_masks(&atlas, &fg, threshold).unwrap();
        for r in 0..h {
            for c in 0..w {
                let black = atlas.get(r, c).iter().all(|&x| x <= threshold);
                prop_assert_eq!(!masks.known.get(r, c), fg.get(r, c) && black);
            }
        }
        prop_assert_eq!(&masks.foreground, &fg);
    }

    #[test]
    fn removing_source_faces_never_shrinks_the_missing_set(seed in any::<u64>()) {
        let size = 48;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = body(seed);
        let target = m.compute_vertex_normals().unwrap();
        let fg = rasterize_background_mask(&target, size, size).unwrap();
        let drop_a: Vec<bool> = (0..m.n_faces()).map(|_| rng.gen_bool(0.2)).collect();
        let drop_b: Vec<bool> = drop_a.iter().map(|&d| d || rng.gen_bool(0.2)).collect();
        let missing = |drop: &[bool]| {
            let src = TexturedMesh::new(keep_faces(&m, |f| !drop[f]), white(size)).unwrap();
            let atlas = transfer_texture(&src, &target, &cfg(size)).unwrap();
            derive_masks(&atlas, &fg, 10).unwrap().known
        };
        let (a, b) = (missing(&drop_a), missing(&drop_b));
        for (ka, kb) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!(*ka || !*kb);
        }
        prop_assert!(b.as_slice().iter().filter(|k| !**k).count() >= a.as_slice().iter().filter(|k| !**k).count());
    }
}

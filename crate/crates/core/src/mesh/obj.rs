//! Wavefront OBJ reading and writing.
//!
//! Supported subset: `v`, `vt`, `f` with `v`, `v/vt`, `v/vt/vn` or `v//vn`
//! corners (triangles only), `mtllib`/`usemtl` and a single `map_Kd` texture.
//! Normals in the file are ignored.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::{Error, Result};

use super::{Mesh, TextureAtlas, TexturedMesh, Uv, Vec3};

#[derive(Clone, Debug)]
pub struct LoadedObj {
    pub mesh: Mesh,
    pub atlas: Option<TextureAtlas>,
    pub texture_path: Option<PathBuf>,
}

impl LoadedObj {
    pub fn into_textured(self) -> Result<TexturedMesh> {
        let atlas = self
            .atlas
            .ok_or_else(|| Error::invalid("OBJ does not reference a texture"))?;
        TexturedMesh::new(self.mesh, atlas)
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_floats<const N: usize>(
    path: &Path,
    line: usize,
    parts: &mut std::str::SplitWhitespace<'_>,
) -> Result<[f64; N]> {
    let mut out = [0.0f64; N];
    for o in out.iter_mut() {
        let tok = parts
            .next()
            .ok_or_else(|| parse_err(path, line, format!("expected {N} numbers")))?;
        *o = tok
            .parse()
            .map_err(|_| parse_err(path, line, format!("bad number `{tok}`")))?;
        if !o.is_finite() {
            return Err(parse_err(path, line, "non-finite coordinate"));
        }
    }
    Ok(out)
}

fn resolve_index(path: &Path, line: usize, tok: &str, count: usize) -> Result<usize> {
    let i: i64 = tok
        .parse()
        .map_err(|_| parse_err(path, line, format!("bad index `{tok}`")))?;
    let idx = if i > 0 {
        i - 1
    } else if i < 0 {
        count as i64 + i
    } else {
        return Err(parse_err(path, line, "index 0 is invalid (OBJ indices are 1-based)"));
    };
    if idx < 0 || idx as usize >= count {
        return Err(parse_err(path, line, format!("index {i} out of range")));
    }
    Ok(idx as usize)
}

fn read_material_texture(mtl_path: &Path, wanted: Option<&str>) -> Result<Option<PathBuf>> {
    let text = fs::read_to_string(mtl_path)
        .map_err(|_| Error::MissingTexture(mtl_path.to_path_buf()))?;
    let dir = mtl_path.parent().unwrap_or(Path::new("."));
    let mut current: Option<String> = None;
    let mut first: Option<PathBuf> = None;
    for raw in text.lines() {
        let line = raw.trim();
        let mut parts = line.splitn(2, char::is_whitespace);
        match (parts.next(), parts.next().map(str::trim)) {
            (Some("newmtl"), Some(name)) => current = Some(name.to_string()),
            (Some("map_Kd"), Some(file)) => {
                let p = dir.join(file);
                if wanted.is_none() || current.as_deref() == wanted {
                    return Ok(Some(p));
                }
                first.get_or_insert(p);
            }
            _ => {}
        }
    }
    Ok(if wanted.is_none() { first } else { None })
}

pub fn load_obj(path: &Path) -> Result<LoadedObj> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut positions: Vec<Vec3> = Vec::new();
    let mut tex: Vec<Uv> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    let mut corner_uvs: Vec<[Uv; 3]> = Vec::new();
    let mut faces_with_uv = 0usize;
    let mut mtllib: Option<PathBuf> = None;
    let mut usemtl: Option<String> = None;

    for (ln, raw) in text.lines().enumerate() {
        let line_no = ln + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let tag = parts.next().unwrap_or("");
        match tag {
            "v" => {
                let [x, y, z] = parse_floats::<3>(path, line_no, &mut parts)?;
                positions.push(Vec3::new(x, y, z));
            }
            "vt" => {
                let [u, v] = parse_floats::<2>(path, line_no, &mut parts)?;
                tex.push([u, v]);
            }
            "f" => {
                let corners: Vec<&str> = parts.collect();
                if corners.len() != 3 {
                    return Err(parse_err(
                        path,
                        line_no,
                        format!("only triangles are supported, got {} corners", corners.len()),
                    ));
                }
                let mut face = [0u32; 3];
                let mut uv = [[0.0; 2]; 3];
                let mut has_uv = 0;
                for (k, c) in corners.iter().enumerate() {
                    let mut refs = c.split('/');
                    let vi = resolve_index(path, line_no, refs.next().unwrap_or(""), positions.len())?;
                    face[k] = vi as u32;
                    if let Some(t) = refs.next().filter(|t| !t.is_empty()) {
                        let ti = resolve_index(path, line_no, t, tex.len())?;
                        uv[k] = tex[ti];
                        has_uv += 1;
                    }
                }
                match has_uv {
                    0 => {}
                    3 => {
                        faces_with_uv += 1;
                        corner_uvs.push(uv);
                    }
                    _ => return Err(parse_err(path, line_no, "face mixes corners with and without UVs")),
                }
                faces.push(face);
            }
            "mtllib" => {
                let name = line[tag.len()..].trim();
                mtllib = Some(path.parent().unwrap_or(Path::new(".")).join(name));
            }
            "usemtl" => {
                let name = line[tag.len()..].trim().to_string();
                if let Some(prev) = &usemtl {
                    if *prev != name {
                        return Err(parse_err(path, line_no, "multiple materials are not supported"));
                    }
                }
                usemtl = Some(name);
            }
            _ => {}
        }
    }

    if faces_with_uv != 0 && faces_with_uv != faces.len() {
        return Err(parse_err(path, 0, "some faces have UVs and others do not"));
    }
    let mut mesh = Mesh {
        vertices: positions,
        faces,
        corner_uvs: None,
        vertex_normals: None,
    };
    if faces_with_uv > 0 {
        mesh.corner_uvs = Some(corner_uvs);
    }
    mesh.validate().map_err(|e| parse_err(path, 0, e.to_string()))?;

    let texture_path = match &mtllib {
        Some(m) => read_material_texture(m, usemtl.as_deref())?,
        None => None,
    };
    let atlas = match &texture_path {
        Some(p) => Some(TextureAtlas::load_png(p)?),
        None => None,
    };
    Ok(LoadedObj {
        mesh,
        atlas,
        texture_path,
    })
}

/// Writes `path`; with an atlas, also writes `<stem>.mtl` and `<stem>.png`
/// beside it. Coordinates are printed in shortest round-trip form, so a reload
/// reproduces them exactly.
pub fn save_obj(path: &Path, mesh: &Mesh, atlas: Option<&TextureAtlas>) -> Result<()> {
    mesh.validate()?;
    if atlas.is_some() && mesh.corner_uvs.is_none() {
        return Err(Error::invalid("a texture needs per-corner UVs"));
    }
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::invalid(format!("bad output path {}", path.display())))?
        .to_string();
    let dir = path.parent().unwrap_or(Path::new("."));

    let mut out = String::new();
    if atlas.is_some() {
        writeln!(out, "mtllib {stem}.mtl").unwrap();
    }
    for v in &mesh.vertices {
        writeln!(out, "v {} {} {}", v.x, v.y, v.z).unwrap();
    }
    if let Some(uvs) = &mesh.corner_uvs {
        for c in uvs {
            for uv in c {
                writeln!(out, "vt {} {}", uv[0], uv[1]).unwrap();
            }
        }
    }
    if atlas.is_some() {
        writeln!(out, "usemtl material0").unwrap();
    }
    for (fi, f) in mesh.faces.iter().enumerate() {
        if mesh.corner_uvs.is_some() {
            let t = 3 * fi + 1;
            writeln!(
                out,
                "f {}/{} {}/{} {}/{}",
                f[0] + 1,
                t,
                f[1] + 1,
                t + 1,
                f[2] + 1,
                t + 2
            )
            .unwrap();
        } else {
            writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;

    if let Some(atlas) = atlas {
        let mtl = dir.join(format!("{stem}.mtl"));
        let body = format!("newmtl material0\nKd 1 1 1\nmap_Kd {stem}.png\n");
        fs::write(&mtl, body).map_err(|e| Error::io(&mtl, e))?;
        atlas.save_png(&dir.join(format!("{stem}.png")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, s: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, s).unwrap();
        p
    }

    #[test]
    fn single_triangle_with_uvs() {
        let d = tempfile::tempdir().unwrap();
        let p = write(
            d.path(),
            "t.obj",
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nf 1/1 2/2 3/3\n",
        );
        let o = load_obj(&p).unwrap();
        assert_eq!(o.mesh.n_vertices(), 3);
        assert_eq!(o.mesh.n_faces(), 1);
        assert_eq!(
            o.mesh.corner_uvs.unwrap()[0],
            [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]
        );
        assert!(o.atlas.is_none());
    }

    #[test]
    fn zero_index_is_a_parse_error_with_line() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "z.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n");
        match load_obj(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn quads_and_garbage_are_rejected() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "q.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 4 3\n");
        assert!(matches!(load_obj(&p), Err(Error::Parse { line: 5, .. })));
        let p = write(d.path(), "g.obj", "v 0 zero 0\n");
        assert!(matches!(load_obj(&p), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn missing_texture_is_distinct() {
        let d = tempfile::tempdir().unwrap();
        write(d.path(), "m.mtl", "newmtl a\nmap_Kd nothere.png\n");
        let p = write(
            d.path(),
            "m.obj",
            "mtllib m.mtl\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nusemtl a\nf 1/1 2/2 3/3\n",
        );
        assert!(matches!(load_obj(&p), Err(Error::MissingTexture(_))));
    }

    #[test]
    fn cube_round_trip_without_uvs() {
        let d = tempfile::tempdir().unwrap();
        let mut v = Vec::new();
        for i in 0..8 {
            v.push(Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64));
        }
        let f = vec![
            [0, 2, 1], [1, 2, 3], [4, 5, 6], [5, 7, 6], [0, 1, 4], [1, 5, 4],
            [2, 6, 3], [3, 6, 7], [0, 4, 2], [2, 4, 6], [1, 3, 5], [3, 7, 5],
        ];
        let m = Mesh::new(v, f).unwrap();
        let p = d.path().join("cube.obj");
        save_obj(&p, &m, None).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(!text.contains("vt"));
        let back = load_obj(&p).unwrap().mesh;
        assert_eq!(back.faces, m.faces);
        assert_eq!(back.vertices, m.vertices);
    }

    #[test]
    fn textured_round_trip() {
        let d = tempfile::tempdir().unwrap();
        let m = Mesh::new(
            vec![Vec3::new(0.1, 0.2, 0.3), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, -2.5)],
            vec![[0, 1, 2]],
        )
        .unwrap()
        .with_uvs(vec![[[0.25, 0.5], [1.0, 0.0], [0.0, 1.0]]])
        .unwrap();
        let mut a = TextureAtlas::black(3, 2).unwrap();
        a.set(1, 2, [10, 20, 30]);
        let p = d.path().join("tex.obj");
        save_obj(&p, &m, Some(&a)).unwrap();
        let t = load_obj(&p).unwrap().into_textured().unwrap();
        assert_eq!(t.mesh, m);
        assert_eq!(t.atlas, a);
    }
}

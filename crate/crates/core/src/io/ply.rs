//! Scene files in PLY.
//!
//! ```text
//! ply
//! format binary_little_endian 1.0
//! comment objgs_version 1
//! comment units meters
//! comment sh_degree 1
//! comment bounds <min x y z> <max x y z>
//! comment no_prune 0
//! element vertex <n>
//! property double x | y | z
//! property double tu_x | tu_y | tu_z | tv_x | tv_y | tv_z
//! property double scale_u | scale_v
//! property double opacity_logit
//! property double f_0 ... f_<3k-1>   (coefficient j, channel c at f_<3j+c>)
//! end_header
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::scene::{Aabb, ObjectGaussian, SurfelGaussian};
use crate::sh;

pub const SCENE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PlyFormat {
    #[default]
    BinaryLittleEndian,
    Ascii,
}

const GEOMETRY: [&str; 12] = [
    "x",
    "y",
    "z",
    "tu_x",
    "tu_y",
    "tu_z",
    "tv_x",
    "tv_y",
    "tv_z",
    "scale_u",
    "scale_v",
    "opacity_logit",
];

fn property_names(coeffs: usize) -> Vec<String> {
    GEOMETRY
        .iter()
        .map(|s| s.to_string())
        .chain((0..3 * coeffs).map(|i| format!("f_{i}")))
        .collect()
}

fn record(p: &SurfelGaussian) -> Vec<f64> {
    let mut v = Vec::with_capacity(12 + 3 * p.color.len());
    v.extend(p.center.iter());
    v.extend(p.tangent_u.iter());
    v.extend(p.tangent_v.iter());
    v.extend(p.scale);
    v.push(p.opacity_logit);
    v.extend(p.color.iter().flatten());
    v
}

fn primitive(v: &[f64]) -> SurfelGaussian {
    SurfelGaussian {
        center: Vector3::new(v[0], v[1], v[2]),
        tangent_u: Vector3::new(v[3], v[4], v[5]),
        tangent_v: Vector3::new(v[6], v[7], v[8]),
        scale: [v[9], v[10]],
        opacity_logit: v[11],
        color: v[12..].chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
    }
}

/// Serializes a scene. Doubles are written at full precision in both formats.
pub fn write_scene(scene: &ObjectGaussian, format: PlyFormat, out: &mut impl Write) -> Result<()> {
    let degree = scene.sh_degree();
    let coeffs = sh::coeff_count(degree);
    if scene.primitives.iter().any(|p| p.color.len() != coeffs) {
        return Err(Error::Format("primitives disagree on the SH degree".into()));
    }
    let (lo, hi) = (scene.bounds.min, scene.bounds.max);
    writeln!(out, "ply")?;
    match format {
        PlyFormat::BinaryLittleEndian => writeln!(out, "format binary_little_endian 1.0")?,
        PlyFormat::Ascii => writeln!(out, "format ascii 1.0")?,
    }
    writeln!(out, "comment objgs_version {SCENE_VERSION}")?;
    writeln!(out, "comment units meters")?;
    writeln!(out, "comment sh_degree {degree}")?;
    writeln!(
        out,
        "comment bounds {} {} {} {} {} {}",
        lo.x, lo.y, lo.z, hi.x, hi.y, hi.z
    )?;
    writeln!(out, "comment no_prune {}", scene.no_prune as u8)?;
    writeln!(out, "element vertex {}", scene.len())?;
    for name in property_names(coeffs) {
        writeln!(out, "property double {name}")?;
    }
    writeln!(out, "end_header")?;
    for p in &scene.primitives {
        let rec = record(p);
        match format {
            PlyFormat::BinaryLittleEndian => {
                for v in rec {
                    out.write_f64::<LittleEndian>(v)?;
                }
            }
            PlyFormat::Ascii => {
                let line: Vec<String> = rec.iter().map(|v| format!("{v:e}")).collect();
                writeln!(out, "{}", line.join(" "))?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn save_scene(scene: &ObjectGaussian, path: &Path, format: PlyFormat) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_scene(scene, format, &mut w)
}

struct Header {
    format: PlyFormat,
    version: Option<u32>,
    sh_degree: Option<usize>,
    bounds: Option<Aabb>,
    no_prune: bool,
    count: Option<usize>,
    properties: Vec<String>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn parse_num<T: std::str::FromStr>(s: Option<&str>, what: &str) -> Result<T> {
    s.and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(format!("malformed {what}")))
}

fn read_header(r: &mut impl BufRead) -> Result<Header> {
    let mut line = String::new();
    let mut next = |line: &mut String| -> Result<String> {
        line.clear();
        if r.read_line(line)? == 0 {
            return Err(bad("unexpected end of file in PLY header"));
        }
        Ok(line.trim_end_matches(['\n', '\r']).to_string())
    };
    if next(&mut line)? != "ply" {
        return Err(bad("not a PLY file"));
    }
    let mut h = Header {
        format: PlyFormat::BinaryLittleEndian,
        version: None,
        sh_degree: None,
        bounds: None,
        no_prune: false,
        count: None,
        properties: Vec::new(),
    };
    let mut saw_format = false;
    loop {
        let l = next(&mut line)?;
        let mut it = l.split_whitespace();
        match it.next() {
            Some("end_header") => break,
            Some("format") => {
                h.format = match (it.next(), it.next()) {
                    (Some("binary_little_endian"), Some("1.0")) => PlyFormat::BinaryLittleEndian,
                    (Some("ascii"), Some("1.0")) => PlyFormat::Ascii,
                    _ => return Err(bad(format!("unsupported PLY format line '{l}'"))),
                };
                saw_format = true;
            }
            Some("comment") => match it.next() {
                Some("objgs_version") => h.version = Some(parse_num(it.next(), "version")?),
                Some("sh_degree") => h.sh_degree = Some(parse_num(it.next(), "sh_degree")?),
                Some("no_prune") => h.no_prune = parse_num::<u8>(it.next(), "no_prune")? != 0,
                Some("bounds") => {
                    let v: Vec<f64> = it
                        .map(|s| s.parse())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad("malformed bounds"))?;
                    if v.len() != 6 {
                        return Err(bad("bounds need six values"));
                    }
                    h.bounds = Some(Aabb::new(
                        Vector3::new(v[0], v[1], v[2]),
                        Vector3::new(v[3], v[4], v[5]),
                    ));
                }
                _ => {}
            },
            Some("element") => {
                if it.next() != Some("vertex") || h.count.is_some() {
                    return Err(bad(format!("unexpected element line '{l}'")));
                }
                h.count = Some(parse_num(it.next(), "vertex count")?);
            }
            Some("property") => {
                if it.next() != Some("double") {
                    return Err(bad(format!("only double properties are supported: '{l}'")));
                }
                h.properties
                    .push(it.next().ok_or_else(|| bad("property without name"))?.to_string());
            }
            Some("obj_info") | None => {}
            Some(other) => return Err(bad(format!("unknown PLY header keyword '{other}'"))),
        }
    }
    if !saw_format {
        return Err(bad("PLY header has no format line"));
    }
    Ok(h)
}

/// Parses a scene, checking the version, property layout and record count.
pub fn read_scene(r: &mut impl BufRead) -> Result<ObjectGaussian> {
    let h = read_header(r)?;
    let version = h.version.ok_or_else(|| bad("scene file carries no version"))?;
    if version != SCENE_VERSION {
        return Err(Error::Version {
            found: version,
            expected: SCENE_VERSION,
        });
    }
    let degree = h.sh_degree.ok_or_else(|| bad("scene file carries no sh_degree"))?;
    if degree > sh::MAX_DEGREE {
        return Err(bad(format!("SH degree {degree} is not supported")));
    }
    let bounds = h.bounds.ok_or_else(|| bad("scene file carries no bounds"))?;
    let count = h.count.ok_or_else(|| bad("scene file has no vertex element"))?;
    let names = property_names(sh::coeff_count(degree));
    if h.properties != names {
        return Err(bad("property layout does not match the declared SH degree"));
    }
    let width = names.len();
    let mut primitives = Vec::with_capacity(count.min(1 << 24));
    let mut rec = vec![0.0; width];
    match h.format {
        PlyFormat::BinaryLittleEndian => {
            for i in 0..count {
                for v in rec.iter_mut() {
                    *v = r
                        .read_f64::<LittleEndian>()
                        .map_err(|_| bad(format!("file truncated at record {i} of {count}")))?;
                }
                primitives.push(primitive(&rec));
            }
            let mut rest = [0u8; 1];
            if r.read(&mut rest)? != 0 {
                return Err(bad("trailing data after the declared records"));
            }
        }
        PlyFormat::Ascii => {
            let mut lines = r.lines().filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()));
            for i in 0..count {
                let line = lines
                    .next()
                    .ok_or_else(|| bad(format!("file truncated at record {i} of {count}")))??;
                let vals: Vec<f64> = line
                    .split_whitespace()
                    .map(|s| s.parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad(format!("malformed record {i}")))?;
                if vals.len() != width {
                    return Err(bad(format!("record {i} has {} values, expected {width}", vals.len())));
                }
                primitives.push(primitive(&vals));
            }
            if lines.next().is_some() {
                return Err(bad("trailing data after the declared records"));
            }
        }
    }
    let mut scene = ObjectGaussian::new(primitives, bounds);
    scene.no_prune = h.no_prune;
    Ok(scene)
}

pub fn load_scene(path: &Path) -> Result<ObjectGaussian> {
    let mut r = BufReader::new(File::open(path)?);
    read_scene(&mut r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::random_splat_scene;
    use std::io::Cursor;

    fn roundtrip(scene: &ObjectGaussian, format: PlyFormat) -> Result<ObjectGaussian> {
        let mut buf = Vec::new();
        write_scene(scene, format, &mut buf)?;
        read_scene(&mut Cursor::new(buf))
    }

    fn sample() -> ObjectGaussian {
        let mut s = random_splat_scene(37, (0.01, 0.1), 2, 5);
        for (i, p) in s.primitives.iter_mut().enumerate() {
            p.color[5][1] = 0.1 / (i as f64 + 3.0);
        }
        s.no_prune = true;
        s
    }

    #[test]
    fn binary_roundtrip_is_bit_exact() {
        let s = sample();
        let back = roundtrip(&s, PlyFormat::BinaryLittleEndian).unwrap();
        assert_eq!(back, s);
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_scene(&s, PlyFormat::BinaryLittleEndian, &mut a).unwrap();
        write_scene(&back, PlyFormat::BinaryLittleEndian, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ascii_roundtrip_is_exact_too() {
        let s = sample();
        assert_eq!(roundtrip(&s, PlyFormat::Ascii).unwrap(), s);
    }

    #[test]
    fn empty_scene_roundtrips() {
        let s = ObjectGaussian::new(Vec::new(), Aabb::cube(Vector3::zeros(), 1.0));
        assert_eq!(roundtrip(&s, PlyFormat::BinaryLittleEndian).unwrap(), s);
    }

    #[test]
    fn version_mismatch_is_reported() {
        let mut buf = Vec::new();
        write_scene(&sample(), PlyFormat::BinaryLittleEndian, &mut buf).unwrap();
        let text = String::from_utf8_lossy(&buf).replacen("objgs_version 1", "objgs_version 7", 1);
        let pos = buf.windows(10).position(|w| w == b"end_header").unwrap() + 11;
        let mut patched = text.as_bytes()[..pos].to_vec();
        patched.extend_from_slice(&buf[pos..]);
        assert!(matches!(
            read_scene(&mut Cursor::new(patched)),
            Err(Error::Version { found: 7, expected: 1 })
        ));
    }

    #[test]
    fn truncation_and_trailing_bytes_are_errors() {
        let mut buf = Vec::new();
        write_scene(&sample(), PlyFormat::BinaryLittleEndian, &mut buf).unwrap();
        let cut = buf[..buf.len() - 8].to_vec();
        assert!(matches!(read_scene(&mut Cursor::new(cut)), Err(Error::Format(_))));
        let mut extra = buf.clone();
        extra.push(0);
        assert!(matches!(read_scene(&mut Cursor::new(extra)), Err(Error::Format(_))));

        let mut txt = Vec::new();
        write_scene(&sample(), PlyFormat::Ascii, &mut txt).unwrap();
        let s = String::from_utf8(txt).unwrap();
        let short: String = s.lines().take(s.lines().count() - 1).collect::<Vec<_>>().join("\n");
        assert!(matches!(
            read_scene(&mut Cursor::new(short.into_bytes())),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn foreign_files_are_rejected() {
        assert!(read_scene(&mut Cursor::new(b"hello\n".to_vec())).is_err());
        let no_version = b"ply\nformat ascii 1.0\nelement vertex 0\nend_header\n".to_vec();
        assert!(matches!(
            read_scene(&mut Cursor::new(no_version)),
            Err(Error::Format(_))
        ));
    }
}

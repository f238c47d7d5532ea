//! Scene persistence as binary little-endian PLY.
//!
//! Vertex properties, in order:
//! `x y z  f_dc_0..f_dc_{C-1}  f_rest_0..f_rest_{15C-1}  opacity
//!  scale_0 scale_1 scale_2  rot_0 rot_1 rot_2 rot_3`
//! holding raw pre-activation values. `f_rest` is channel-major like common
//! splat PLYs: the 15 higher-order coefficients of channel c occupy
//! `f_rest_{15c}..f_rest_{15c+14}`. Properties are `double` so a save/load
//! round trip is bit-exact. Header comments record the channel count, SH
//! degree, and the optional normalization record.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{Vector3, Vector4};

use crate::error::{LrfError, Result};
use crate::scene::{LatentGaussian, NormRecord, Scene};
use crate::sh::SH_COEFFS;

const REST_COEFFS: usize = SH_COEFFS - 1;

fn property_names(channels: usize) -> Vec<String> {
    let mut names = vec!["x".into(), "y".into(), "z".into()];
    for c in 0..channels {
        names.push(format!("f_dc_{c}"));
    }
    for k in 0..channels * REST_COEFFS {
        names.push(format!("f_rest_{k}"));
    }
    names.push("opacity".into());
    for k in 0..3 {
        names.push(format!("scale_{k}"));
    }
    for k in 0..4 {
        names.push(format!("rot_{k}"));
    }
    names
}

fn fmt_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Save a scene; see the module docs for the layout.
pub fn save_scene(path: impl AsRef<Path>, scene: &Scene) -> Result<()> {
    scene.validate()?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "ply")?;
    writeln!(w, "format binary_little_endian 1.0")?;
    writeln!(w, "comment lrf_channels={}", scene.channels)?;
    writeln!(w, "comment lrf_sh_degree={}", scene.sh_degree)?;
    if let Some(n) = &scene.norm {
        writeln!(w, "comment lrf_norm_mean={}", fmt_floats(&n.mean))?;
        writeln!(w, "comment lrf_norm_scale={}", fmt_floats(&n.scale))?;
    }
    writeln!(w, "element vertex {}", scene.len())?;
    for name in property_names(scene.channels) {
        writeln!(w, "property double {name}")?;
    }
    writeln!(w, "end_header")?;

    for g in &scene.gaussians {
        for v in g.position.iter() {
            w.write_f64::<LittleEndian>(*v)?;
        }
        for c in 0..scene.channels {
            w.write_f64::<LittleEndian>(g.sh[c * SH_COEFFS])?;
        }
        for c in 0..scene.channels {
            for k in 1..SH_COEFFS {
                w.write_f64::<LittleEndian>(g.sh[c * SH_COEFFS + k])?;
            }
        }
        w.write_f64::<LittleEndian>(g.opacity_logit)?;
        for v in g.log_scale.iter() {
            w.write_f64::<LittleEndian>(*v)?;
        }
        for v in g.rotation.iter() {
            w.write_f64::<LittleEndian>(*v)?;
        }
    }
    Ok(())
}

fn parse_floats(path: &Path, what: &str, text: &str) -> Result<Vec<f64>> {
    text.split_whitespace()
        .map(|t| {
            t.parse::<f64>().map_err(|_| LrfError::Parse {
                path: path.display().to_string(),
                message: format!("bad float '{t}' in {what}"),
            })
        })
        .collect()
}

/// Load a scene saved by [`save_scene`].
pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let perr = |message: String| LrfError::Parse {
        path: path.display().to_string(),
        message,
    };
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);

    let mut line = String::new();
    let mut read_line = |r: &mut std::io::BufReader<std::fs::File>| -> Result<String> {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(LrfError::Parse {
                path: path.display().to_string(),
                message: "unexpected end of header".into(),
            });
        }
        Ok(line.trim_end().to_string())
    };

    if read_line(&mut r)? != "ply" {
        return Err(perr("missing 'ply' magic line".into()));
    }
    if read_line(&mut r)? != "format binary_little_endian 1.0" {
        return Err(perr("expected 'format binary_little_endian 1.0'".into()));
    }

    let mut channels: Option<usize> = None;
    let mut sh_degree: Option<usize> = None;
    let mut norm_mean: Option<Vec<f64>> = None;
    let mut norm_scale: Option<Vec<f64>> = None;
    let mut vertex_count: Option<usize> = None;
    let mut properties: Vec<String> = Vec::new();

    loop {
        let l = read_line(&mut r)?;
        if l == "end_header" {
            break;
        } else if let Some(rest) = l.strip_prefix("comment ") {
            if let Some(v) = rest.strip_prefix("lrf_channels=") {
                channels = Some(v.trim().parse().map_err(|_| perr(format!("bad lrf_channels '{v}'")))?);
            } else if let Some(v) = rest.strip_prefix("lrf_sh_degree=") {
                sh_degree = Some(v.trim().parse().map_err(|_| perr(format!("bad lrf_sh_degree '{v}'")))?);
            } else if let Some(v) = rest.strip_prefix("lrf_norm_mean=") {
                norm_mean = Some(parse_floats(path, "lrf_norm_mean", v)?);
            } else if let Some(v) = rest.strip_prefix("lrf_norm_scale=") {
                norm_scale = Some(parse_floats(path, "lrf_norm_scale", v)?);
            }
        } else if let Some(rest) = l.strip_prefix("element ") {
            let mut it = rest.split_whitespace();
            match (it.next(), it.next()) {
                (Some("vertex"), Some(n)) => {
                    vertex_count = Some(n.parse().map_err(|_| perr(format!("bad vertex count '{n}'")))?);
                }
                _ => return Err(perr(format!("unsupported element '{rest}'"))),
            }
        } else if let Some(rest) = l.strip_prefix("property ") {
            let mut it = rest.split_whitespace();
            match (it.next(), it.next()) {
                (Some("double"), Some(name)) => properties.push(name.to_string()),
                (Some(ty), Some(name)) => {
                    return Err(perr(format!("property '{name}' has type '{ty}', expected double")));
                }
                _ => return Err(perr(format!("malformed property line '{rest}'"))),
            }
        } else {
            return Err(perr(format!("unrecognized header line '{l}'")));
        }
    }

    let channels = channels.ok_or_else(|| perr("missing 'comment lrf_channels=' line".into()))?;
    let sh_degree = sh_degree.ok_or_else(|| perr("missing 'comment lrf_sh_degree=' line".into()))?;
    let vertex_count = vertex_count.ok_or_else(|| perr("missing 'element vertex' line".into()))?;
    if channels == 0 {
        return Err(perr("lrf_channels must be positive".into()));
    }

    let expected = property_names(channels);
    if properties != expected {
        // Name the first discrepancy for a useful message.
        for (i, want) in expected.iter().enumerate() {
            match properties.get(i) {
                None => {
                    return Err(perr(format!(
                        "missing property '{want}' (expected {} properties for {} channels, found {})",
                        expected.len(),
                        channels,
                        properties.len()
                    )));
                }
                Some(got) if got != want => {
                    return Err(perr(format!("property {i} is '{got}', expected '{want}'")));
                }
                _ => {}
            }
        }
        return Err(perr(format!(
            "unexpected extra property '{}'",
            properties[expected.len()]
        )));
    }

    let norm = match (norm_mean, norm_scale) {
        (None, None) => None,
        (Some(mean), Some(scale)) => {
            if mean.len() != channels || scale.len() != channels {
                return Err(perr(format!(
                    "normalization record has {}/{} entries, expected {channels}",
                    mean.len(),
                    scale.len()
                )));
            }
            Some(NormRecord { mean, scale })
        }
        _ => return Err(perr("normalization record needs both mean and scale".into())),
    };

    let mut gaussians = Vec::with_capacity(vertex_count);
    let mut buf = vec![0.0f64; expected.len()];
    for i in 0..vertex_count {
        for v in buf.iter_mut() {
            *v = r.read_f64::<LittleEndian>().map_err(|_| {
                perr(format!("truncated vertex data at gaussian {i}"))
            })?;
        }
        let mut sh = vec![0.0; channels * SH_COEFFS];
        for c in 0..channels {
            sh[c * SH_COEFFS] = buf[3 + c];
        }
        let rest_base = 3 + channels;
        for c in 0..channels {
            for k in 1..SH_COEFFS {
                sh[c * SH_COEFFS + k] = buf[rest_base + c * REST_COEFFS + (k - 1)];
            }
        }
        let tail = 3 + channels + channels * REST_COEFFS;
        gaussians.push(LatentGaussian {
            position: Vector3::new(buf[0], buf[1], buf[2]),
            log_scale: Vector3::new(buf[tail + 1], buf[tail + 2], buf[tail + 3]),
            rotation: Vector4::new(buf[tail + 4], buf[tail + 5], buf[tail + 6], buf[tail + 7]),
            opacity_logit: buf[tail],
            sh,
        });
    }
    // Trailing garbage means the file disagrees with its own header.
    let mut one = [0u8; 1];
    if r.read(&mut one)? != 0 {
        return Err(perr("trailing data after last vertex".into()));
    }

    let scene = Scene {
        gaussians,
        channels,
        sh_degree,
        norm,
    };
    scene.validate()?;
    Ok(scene)
}

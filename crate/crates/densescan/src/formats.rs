//! On-disk formats: slide and mask PNGs with JSON sidecars, probability maps
//! (DSPM1), heatmaps and weight bundles.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use densescan_core::codec::{decode_bundle, encode_bundle};
use densescan_core::geometry::ProbabilityMap;
use densescan_core::params::NetworkParams;
use densescan_core::pyramid::NetworkSpec;
use densescan_core::wsi::{AnnotationSet, BinaryMask, RgbImage, SlideRaster};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::hash::sha256_hex;

pub const MAP_MAGIC: &str = "DSPM1";

pub fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

fn encode_png(width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().expect("in-memory write");
        w.write_image_data(data).expect("in-memory write");
    }
    out
}

/// Decodes an 8-bit PNG into (width, height, channels, samples).
fn decode_png(path: &Path) -> CliResult<(usize, usize, usize, Vec<u8>)> {
    let bytes = read_bytes(path)?;
    let mut dec = png::Decoder::new(bytes.as_slice());
    dec.set_transformations(png::Transformations::EXPAND);
    let mut reader = dec.read_info().map_err(|e| CliError::io(path, e))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| CliError::io(path, e))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(CliError::io(path, "only 8-bit PNG is supported"));
    }
    let channels = info.color_type.samples();
    buf.truncate(info.width as usize * info.height as usize * channels);
    Ok((info.width as usize, info.height as usize, channels, buf))
}

pub fn write_rgb_png(path: &Path, img: &RgbImage) -> CliResult<()> {
    write_bytes(path, &encode_png(img.width(), img.height(), png::ColorType::Rgb, img.data()))
}

/// Reads RGB, RGBA (alpha dropped), grey or grey-alpha PNGs.
pub fn read_rgb_png(path: &Path) -> CliResult<RgbImage> {
    let (w, h, c, data) = decode_png(path)?;
    let rgb: Vec<u8> = match c {
        3 => data,
        4 => data.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        1 => data.iter().flat_map(|&g| [g, g, g]).collect(),
        2 => data.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        _ => return Err(CliError::io(path, format!("unsupported PNG with {c} channels"))),
    };
    Ok(RgbImage::from_raw(w, h, rgb)?)
}

/// Greyscale PNG, 255 for set pixels.
pub fn write_mask_png(path: &Path, mask: &BinaryMask) -> CliResult<()> {
    let data: Vec<u8> = mask.data().iter().map(|&v| v * 255).collect();
    write_bytes(path, &encode_png(mask.width(), mask.height(), png::ColorType::Grayscale, &data))
}

/// Any non-zero first channel counts as set.
pub fn read_mask_png(path: &Path) -> CliResult<BinaryMask> {
    let (w, h, c, data) = decode_png(path)?;
    Ok(BinaryMask::from_raw(w, h, data.chunks_exact(c).map(|p| (p[0] != 0) as u8).collect())?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlideMeta {
    pub id: String,
    pub spacing_um: f64,
}

/// Slide `<dir>/<id>.png` with sidecar `<dir>/<id>.json`.
pub fn write_slide(dir: &Path, slide: &SlideRaster) -> CliResult<()> {
    write_rgb_png(&dir.join(format!("{}.png", slide.id)), &slide.image)?;
    write_json(&dir.join(format!("{}.json", slide.id)), &SlideMeta { id: slide.id.clone(), spacing_um: slide.spacing_um })
}

pub fn read_slide(dir: &Path, id: &str) -> CliResult<SlideRaster> {
    let meta_path = dir.join(format!("{id}.json"));
    let meta: SlideMeta = read_json(&meta_path)?;
    if meta.id != id {
        return Err(CliError::Validation(format!("{}: sidecar names slide `{}`", meta_path.display(), meta.id)));
    }
    let image = read_rgb_png(&dir.join(format!("{id}.png")))?;
    Ok(SlideRaster::new(meta.id, meta.spacing_um, image)?)
}

pub fn annotations_path(dir: &Path, id: &str) -> std::path::PathBuf {
    dir.join(format!("{id}.annotations.json"))
}

/// Missing annotation files mean no lesions.
pub fn read_annotations(dir: &Path, id: &str) -> CliResult<AnnotationSet> {
    let p = annotations_path(dir, id);
    if !p.exists() {
        return Ok(AnnotationSet::default());
    }
    let a: AnnotationSet = read_json(&p)?;
    a.validate().map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?;
    Ok(a)
}

fn header_token(name: &str, s: &str) -> CliResult<()> {
    if s.is_empty() || s.chars().any(|c| c.is_whitespace() || c.is_control()) {
        return Err(CliError::Validation(format!("map {name} `{s}` must be a non-empty token without whitespace")));
    }
    Ok(())
}

/// DSPM1: text header lines, then `width*height` little-endian f32 values in
/// row-major order.
pub fn encode_map(map: &ProbabilityMap) -> CliResult<Vec<u8>> {
    header_token("slide id", &map.slide_id)?;
    header_token("network hash", &map.network_hash)?;
    if map.values.len() != map.width * map.height {
        return Err(CliError::Validation(format!(
            "map has {} values for a {}x{} extent",
            map.values.len(),
            map.width,
            map.height
        )));
    }
    let mut out = format!(
        "{MAP_MAGIC}\nslide_id {}\nextent {} {}\ncell_pitch_px {}\nspacing_um {:?}\norigin_px {:?} {:?}\nalpha {}\nnetwork_hash {}\ndata f32le {}\n",
        map.slide_id,
        map.width,
        map.height,
        map.cell_pitch_px,
        map.spacing_um,
        map.origin_px.0,
        map.origin_px.1,
        map.alpha,
        map.network_hash,
        map.values.len()
    )
    .into_bytes();
    for v in &map.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_map(buf: &[u8]) -> Result<ProbabilityMap, String> {
    let mut pos = 0;
    let mut line = || -> Result<&str, String> {
        let end = buf[pos..].iter().position(|&b| b == b'\n').ok_or("truncated header")? + pos;
        let s = std::str::from_utf8(&buf[pos..end]).map_err(|_| "header is not UTF-8")?;
        pos = end + 1;
        Ok(s)
    };
    if line()? != MAP_MAGIC {
        return Err("not a DSPM1 map".into());
    }
    let mut field = |key: &str, n: usize| -> Result<Vec<String>, String> {
        let l = line()?;
        let mut parts = l.split(' ');
        if parts.next() != Some(key) {
            return Err(format!("expected `{key}` line, found `{l}`"));
        }
        let v: Vec<String> = parts.map(str::to_string).collect();
        if v.len() != n {
            return Err(format!("`{key}` needs {n} values"));
        }
        Ok(v)
    };
    fn num<T: std::str::FromStr>(s: &str) -> Result<T, String> {
        s.parse().map_err(|_| format!("bad number `{s}`"))
    }
    let slide_id = field("slide_id", 1)?.remove(0);
    let ext = field("extent", 2)?;
    let (width, height) = (num::<usize>(&ext[0])?, num::<usize>(&ext[1])?);
    let cell_pitch_px = num(&field("cell_pitch_px", 1)?[0])?;
    let spacing_um = num(&field("spacing_um", 1)?[0])?;
    let o = field("origin_px", 2)?;
    let origin_px = (num(&o[0])?, num(&o[1])?);
    let alpha = num(&field("alpha", 1)?[0])?;
    let network_hash = field("network_hash", 1)?.remove(0);
    let d = field("data", 2)?;
    if d[0] != "f32le" {
        return Err(format!("unsupported value type `{}`", d[0]));
    }
    let count: usize = num(&d[1])?;
    if width.checked_mul(height) != Some(count) {
        return Err(format!("{count} values for a {width}x{height} extent"));
    }
    let body = &buf[pos..];
    if body.len() != count * 4 {
        return Err(format!("expected {} data bytes, found {}", count * 4, body.len()));
    }
    let values = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok(ProbabilityMap { slide_id, width, height, cell_pitch_px, spacing_um, origin_px, alpha, network_hash, values })
}

pub fn write_map(path: &Path, map: &ProbabilityMap) -> CliResult<()> {
    write_bytes(path, &encode_map(map)?)
}

pub fn read_map(path: &Path) -> CliResult<ProbabilityMap> {
    decode_map(&read_bytes(path)?).map_err(|e| CliError::io(path, e))
}

/// Colour of probability `v`: blue at 0, red at 1.
pub fn heat_color(v: f32) -> [u8; 3] {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    [(255.0 * v).round() as u8, 0, (255.0 * (1.0 - v)).round() as u8]
}

/// One pixel per map cell.
pub fn write_heatmap(path: &Path, map: &ProbabilityMap) -> CliResult<()> {
    let data: Vec<u8> = map.values.iter().flat_map(|&v| heat_color(v)).collect();
    write_bytes(path, &encode_png(map.width, map.height, png::ColorType::Rgb, &data))
}

pub fn encode_weights(params: &NetworkParams<f32>) -> Vec<u8> {
    encode_bundle(&params.named_tensors())
}

pub fn decode_weights(spec: &NetworkSpec, bytes: &[u8]) -> densescan_core::Result<NetworkParams<f32>> {
    let tensors = decode_bundle::<f32>(bytes)?;
    let mut params = NetworkParams::<f32>::zeros_like(spec);
    params.load_named(&tensors)?;
    Ok(params)
}

/// Weights and their hash (SHA-256 of the file bytes).
pub fn read_weights(path: &Path, spec: &NetworkSpec) -> CliResult<(NetworkParams<f32>, String)> {
    let bytes = read_bytes(path)?;
    let params = decode_weights(spec, &bytes).map_err(|e| match e {
        densescan_core::Error::Decode(m) => CliError::io(path, m),
        other => CliError::Validation(format!("{}: {other}", path.display())),
    })?;
    Ok((params, sha256_hex(&bytes)))
}

pub fn write_weights(path: &Path, params: &NetworkParams<f32>) -> CliResult<String> {
    let bytes = encode_weights(params);
    write_bytes(path, &bytes)?;
    Ok(sha256_hex(&bytes))
}

/// Buffered text writer for reports.
pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(f);
    w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

//! Dependency-free exports: SVG line plots (hand-emitted polylines) and
//! binary PGM/PPM images (P5/P6, maxval 255). Bit-exact and diffable.

use std::io::Write;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum PlotError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("format error in {path}: {detail}")]
    Format { path: String, detail: String },
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> PlotError + '_ {
    move |source| PlotError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One line series with a stroke color.
pub struct Series<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub values: &'a [f64],
}

/// Render series as polylines into a fixed-size SVG viewport. Constant
/// series draw as horizontal lines mid-panel.
pub fn write_svg_lines(
    path: &Path,
    series: &[Series<'_>],
    width: usize,
    height: usize,
) -> Result<(), PlotError> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in series {
        for &v in s.values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if hi - lo < 1e-12 {
        // flat series: open a unit window around the value
        lo -= 0.5;
        hi += 0.5;
    }
    let margin = 10.0;
    let (w, h) = (width as f64, height as f64);
    let mut svg = String::new();
    svg.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n"
    ));
    for s in series {
        if s.values.is_empty() {
            continue;
        }
        let n = s.values.len();
        let mut points = String::new();
        for (i, &v) in s.values.iter().enumerate() {
            let x = if n == 1 {
                w / 2.0
            } else {
                margin + (w - 2.0 * margin) * i as f64 / (n - 1) as f64
            };
            let y = h - margin - (h - 2.0 * margin) * (v - lo) / (hi - lo);
            points.push_str(&format!("{x:.3},{y:.3} "));
        }
        svg.push_str(&format!(
            "  <polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1\" points=\"{}\"><title>{}</title></polyline>\n",
            s.color,
            points.trim_end(),
            xml_escape(s.label)
        ));
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg).map_err(io_err(path))
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Binary P5 grayscale image, maxval 255.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<(), PlotError> {
    assert_eq!(pixels.len(), width * height);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
    write!(f, "P5\n{width} {height}\n255\n").map_err(io_err(path))?;
    f.write_all(pixels).map_err(io_err(path))?;
    f.flush().map_err(io_err(path))
}

/// Binary P6 RGB image, maxval 255.
pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<(), PlotError> {
    assert_eq!(rgb.len(), 3 * width * height);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
    write!(f, "P6\n{width} {height}\n255\n").map_err(io_err(path))?;
    f.write_all(rgb).map_err(io_err(path))?;
    f.flush().map_err(io_err(path))
}

/// Read back a binary P6 image (tests and round-trip checks).
pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<u8>), PlotError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let fmt_err = |detail: &str| PlotError::Format {
        path: path.display().to_string(),
        detail: detail.to_string(),
    };
    let mut fields = Vec::new();
    let mut pos = 0usize;
    while fields.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| fmt_err("bad header"))?);
    }
    if fields.len() != 4 || fields[0] != "P6" {
        return Err(fmt_err("expected binary P6 header"));
    }
    let width: usize = fields[1].parse().map_err(|_| fmt_err("bad width"))?;
    let height: usize = fields[2].parse().map_err(|_| fmt_err("bad height"))?;
    if fields[3] != "255" {
        return Err(fmt_err("expected maxval 255"));
    }
    pos += 1; // single whitespace after maxval
    let need = 3 * width * height;
    if bytes.len() < pos + need {
        return Err(fmt_err("truncated pixel payload"));
    }
    Ok((width, height, bytes[pos..pos + need].to_vec()))
}

/// Convert a planar [R|G|B] image in [0,1] to interleaved 8-bit RGB.
pub fn planar_to_rgb8(x: &[f64]) -> Vec<u8> {
    assert_eq!(x.len() % 3, 0);
    let p = x.len() / 3;
    let mut out = Vec::with_capacity(x.len());
    for i in 0..p {
        for c in 0..3 {
            let v = (x[c * p + i].clamp(0.0, 1.0) * 255.0).round() as u8;
            out.push(v);
        }
    }
    out
}

/// Tile interleaved RGB images (all `side`×`side`) into a rows×cols grid
/// with a 1-pixel gray separator.
pub fn tile_rgb_grid(tiles: &[Vec<u8>], rows: usize, cols: usize, side: usize) -> (usize, usize, Vec<u8>) {
    assert_eq!(tiles.len(), rows * cols);
    let sep = 1usize;
    let width = cols * side + (cols + 1) * sep;
    let height = rows * side + (rows + 1) * sep;
    let mut out = vec![128u8; 3 * width * height];
    for (t, tile) in tiles.iter().enumerate() {
        assert_eq!(tile.len(), 3 * side * side);
        let (r, c) = (t / cols, t % cols);
        let y0 = sep + r * (side + sep);
        let x0 = sep + c * (side + sep);
        for y in 0..side {
            for x in 0..side {
                let src = 3 * (y * side + x);
                let dst = 3 * ((y0 + y) * width + (x0 + x));
                out[dst..dst + 3].copy_from_slice(&tile[src..src + 3]);
            }
        }
    }
    (width, height, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trips_known_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let rgb: Vec<u8> = vec![0, 10, 20, 255, 128, 0, 1, 2, 3, 4, 5, 6];
        write_ppm(&path, 2, 2, &rgb).unwrap();
        let (w, h, back) = read_ppm(&path).unwrap();
        assert_eq!((w, h), (2, 2));
        assert_eq!(back, rgb);
    }

    #[test]
    fn svg_is_well_formed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plot.svg");
        let values = [0.0, 1.0, -0.5, 2.0];
        write_svg_lines(
            &path,
            &[Series {
                label: "lead<0>",
                color: "steelblue",
                values: &values,
            }],
            300,
            100,
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("<?xml version=\"1.0\""));
        assert!(text.contains("<svg ") && text.trim_end().ends_with("</svg>"));
        // escaped label, balanced polyline tags
        assert!(text.contains("lead&lt;0&gt;"));
        assert_eq!(
            text.matches("<polyline").count(),
            text.matches("</polyline>").count()
        );
    }

    #[test]
    fn constant_series_plots_horizontal_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flat.svg");
        let values = [3.25; 7];
        write_svg_lines(
            &path,
            &[Series {
                label: "flat",
                color: "black",
                values: &values,
            }],
            200,
            100,
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let points = text
            .split("points=\"")
            .nth(1)
            .unwrap()
            .split('"')
            .next()
            .unwrap();
        let ys: Vec<&str> = points
            .split_whitespace()
            .map(|p| p.split(',').nth(1).unwrap())
            .collect();
        assert!(ys.windows(2).all(|w| w[0] == w[1]), "ys: {ys:?}");
    }

    #[test]
    fn grid_tiling_geometry() {
        let tile = vec![255u8; 3 * 4];
        let tiles = vec![tile.clone(), tile.clone(), tile.clone(), tile.clone(), tile.clone(), tile];
        let (w, h, data) = tile_rgb_grid(&tiles, 2, 3, 2);
        assert_eq!(w, 3 * 2 + 4);
        assert_eq!(h, 2 * 2 + 3);
        assert_eq!(data.len(), 3 * w * h);
    }
}

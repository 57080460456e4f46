use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter};
use std::path::{Path, PathBuf};

use super::ImageU8;
use crate::error::{Error, Result};

/// Decodes an 8-bit PNG. Palette and low-bit-depth images are expanded;
/// an alpha channel, if present, is dropped. 16-bit images are rejected.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageU8> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if reader.info().bit_depth == png::BitDepth::Sixteen {
        return Err(Error::Format(format!(
            "{}: 16-bit PNGs are not supported",
            path.display()
        )));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format(format!(
            "{}: unsupported output bit depth {:?}",
            path.display(),
            info.bit_depth
        )));
    }
    buf.truncate(info.buffer_size());
    let (h, w) = (info.height as usize, info.width as usize);
    let (src_channels, keep) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Indexed => {
            return Err(Error::Format(format!(
                "{}: palette was not expanded",
                path.display()
            )))
        }
    };
    let stride = info.line_size;
    let mut data = Vec::with_capacity(h * w * keep);
    for row in buf.chunks(stride).take(h) {
        for px in row[..w * src_channels].chunks(src_channels) {
            data.extend_from_slice(&px[..keep]);
        }
    }
    ImageU8::new(h, w, keep, data)
}

pub fn save_image(img: &ImageU8, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    encoder.set_color(if img.channels == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    });
    encoder.set_depth(png::BitDepth::Eight);
    let to_io = |e: png::EncodingError| match e {
        png::EncodingError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    };
    let mut writer = encoder.write_header().map_err(to_io)?;
    writer.write_image_data(&img.data).map_err(to_io)?;
    writer.finish().map_err(to_io)
}

/// Reads a dataset manifest: one image path per line, blank lines and
/// `#` comments ignored. Relative paths resolve against the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let entry = line.split('#').next().unwrap_or("").trim();
        if entry.is_empty() {
            continue;
        }
        let p = PathBuf::from(entry);
        out.push(if p.is_absolute() { p } else { base.join(p) });
    }
    Ok(out)
}

/// Sorted list of `*.png` files directly inside `dir`.
pub fn list_pngs(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_and_gray_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rgb = ImageU8::new(3, 5, 3, (0..45).map(|v| (v * 5) as u8).collect()).unwrap();
        let p = dir.path().join("rgb.png");
        save_image(&rgb, &p).unwrap();
        assert_eq!(load_image(&p).unwrap(), rgb);

        let gray = ImageU8::new(4, 2, 1, vec![0, 1, 2, 3, 250, 251, 254, 255]).unwrap();
        let p = dir.path().join("gray.png");
        save_image(&gray, &p).unwrap();
        let back = load_image(&p).unwrap();
        assert_eq!(back.channels, 1);
        assert_eq!(back, gray);
    }

    #[test]
    fn known_2x2_pixels_decode() {
        let dir = tempfile::tempdir().unwrap();
        let bytes = vec![255, 0, 0, 0, 255, 0, 0, 0, 255, 10, 20, 30];
        let img = ImageU8::new(2, 2, 3, bytes.clone()).unwrap();
        let p = dir.path().join("k.png");
        save_image(&img, &p).unwrap();
        assert_eq!(load_image(&p).unwrap().data, bytes);
    }

    #[test]
    fn io_and_format_errors() {
        assert!(matches!(
            load_image("/nonexistent/x.png"),
            Err(Error::Io { .. })
        ));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.png");
        std::fs::write(&p, b"not a png").unwrap();
        assert!(matches!(load_image(&p), Err(Error::Format(_))));
        let img = ImageU8::new(1, 1, 1, vec![0]).unwrap();
        assert!(matches!(
            save_image(&img, dir.path().join("missing/dir/x.png")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn sixteen_bit_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("deep.png");
        {
            let f = File::create(&p).unwrap();
            let mut enc = png::Encoder::new(BufWriter::new(f), 1, 1);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Sixteen);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[0x12, 0x34]).unwrap();
        }
        assert!(matches!(load_image(&p), Err(Error::Format(_))));
    }

    #[test]
    fn manifest_skips_comments() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("list.txt");
        std::fs::write(&m, "# header\na.png\n\n  b.png  # trailing\n/abs/c.png\n").unwrap();
        let entries = read_manifest(&m).unwrap();
        assert_eq!(
            entries,
            vec![
                dir.path().join("a.png"),
                dir.path().join("b.png"),
                PathBuf::from("/abs/c.png")
            ]
        );
    }
}

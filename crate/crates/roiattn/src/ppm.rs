//! Scene dumps: binary PPM images plus `class x1 y1 x2 y2` sidecars.

use std::io::{self, Write};
use std::path::Path;

use roiattn_core::scene::{SyntheticScene, CLASS_NAMES};
use roiattn_core::tensor::Tensor;

/// `image` is `[3, H, W]` with values in `[0, 1]`; out-of-range values clamp.
pub fn write_ppm(out: &mut impl Write, image: &Tensor) -> io::Result<()> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, format!("expected [3,H,W], got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    write!(out, "P6\n{w} {h}\n255\n")?;
    let d = image.data();
    let mut buf = Vec::with_capacity(3 * h * w);
    for i in 0..h * w {
        for c in 0..3 {
            buf.push((d[c * h * w + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out.write_all(&buf)
}

pub fn annotation_text(scene: &SyntheticScene) -> String {
    let mut s = String::new();
    for o in &scene.objects {
        let b = o.bbox;
        s.push_str(&format!("{} {} {} {} {}\n", CLASS_NAMES[o.class], b.x1, b.y1, b.x2, b.y2));
    }
    s
}

/// Writes `scene_NNNN.ppm` and `scene_NNNN.txt` for each scene into `dir`.
pub fn dump_scenes(dir: &Path, scenes: &[SyntheticScene]) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, scene) in scenes.iter().enumerate() {
        let mut ppm = Vec::new();
        write_ppm(&mut ppm, &scene.image)?;
        std::fs::write(dir.join(format!("scene_{i:04}.ppm")), ppm)?;
        std::fs::write(dir.join(format!("scene_{i:04}.txt")), annotation_text(scene))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_pixel_order() {
        let img = Tensor::new(&[3, 1, 2], vec![1.0, 0.0, 0.5, 0.0, 0.0, 2.0]).unwrap();
        let mut out = Vec::new();
        write_ppm(&mut out, &img).unwrap();
        assert_eq!(&out[..11], b"P6\n2 1\n255\n");
        assert_eq!(&out[11..], &[255, 128, 0, 0, 0, 255]);
    }

    #[test]
    fn sidecar_lines() {
        let scene = roiattn_core::scene::generate_scene(3);
        let text = annotation_text(&scene);
        assert_eq!(text.lines().count(), scene.objects.len());
        for line in text.lines() {
            let parts: Vec<&str> = line.split(' ').collect();
            assert_eq!(parts.len(), 5);
            assert!(CLASS_NAMES.contains(&parts[0]));
            assert!(parts[1..].iter().all(|p| p.parse::<f32>().is_ok()));
        }
    }
}

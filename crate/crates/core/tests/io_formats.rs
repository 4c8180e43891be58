use bitrec::bitcore::{ImageTensor, Shape};
use bitrec::io::{encode_image, generate_synthetic, load_image, save_image};

fn pattern(bits: u32, channels: usize) -> ImageTensor {
    ImageTensor::from_fn(Shape::new(13, 17, channels), bits, |c, y, x| {
        ((c * 40_503 + y * 7_919 + x * 104_729) % (1usize << bits)) as u16
    })
    .unwrap()
}

// Planar codes from an independent decoder's interleaved samples.
fn planar(samples: &[u16], h: usize, w: usize, c: usize) -> Vec<u16> {
    (0..c).flat_map(|ch| (0..h * w).map(move |p| samples[p * c + ch])).collect()
}

#[test]
fn png_matches_reference_decoder() {
    for (bits, channels) in [(8, 1), (8, 3), (16, 1), (16, 3)] {
        let img = pattern(bits, channels);
        let bytes = encode_image(&img, true).unwrap();
        let reference = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png).unwrap();
        let samples: Vec<u16> = match (bits, channels) {
            (8, 1) => reference.to_luma8().into_raw().into_iter().map(u16::from).collect(),
            (8, 3) => reference.to_rgb8().into_raw().into_iter().map(u16::from).collect(),
            (16, 1) => reference.to_luma16().into_raw(),
            _ => reference.to_rgb16().into_raw(),
        };
        assert_eq!(planar(&samples, 13, 17, channels), img.codes(), "{bits}-bit {channels}-channel");
    }
}

#[test]
fn reference_encoded_png_decodes_identically() {
    let img = pattern(8, 3);
    let mut interleaved = Vec::new();
    for p in 0..13 * 17 {
        for c in 0..3 {
            interleaved.push(img.channel(c)[p] as u8);
        }
    }
    let buf = image::RgbImage::from_raw(17, 13, interleaved).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ref.png");
    buf.save(&path).unwrap();
    assert_eq!(load_image(&path).unwrap(), img);
}

#[test]
fn pnm_matches_reference_decoder() {
    let img = pattern(16, 3);
    let bytes = encode_image(&img, false).unwrap();
    let reference = image::load_from_memory_with_format(&bytes, image::ImageFormat::Pnm).unwrap();
    assert_eq!(planar(&reference.to_rgb16().into_raw(), 13, 17, 3), img.codes());
}

#[test]
fn synthetic_corpus_survives_files() {
    let dir = tempfile::tempdir().unwrap();
    for (i, img) in generate_synthetic(4, 24, 12, 9).unwrap().into_iter().enumerate() {
        for ext in ["png", "ppm"] {
            let path = dir.path().join(format!("s{i}.{ext}"));
            save_image(&img, &path).unwrap();
            let before = std::fs::read(&path).unwrap();
            assert_eq!(load_image(&path).unwrap(), img);
            assert_eq!(std::fs::read(&path).unwrap(), before);
        }
    }
}

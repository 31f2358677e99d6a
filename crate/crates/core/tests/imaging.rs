use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crosssrn::imaging::{
    self, bicubic_resize, gaussian_blur_7x7, load_png, rgb_to_y, save_png, sobel_magnitude, FloatImage,
    ImageBuffer, Ratio,
};

fn write_raw_png(path: &Path, w: u32, h: u32, color: png::ColorType, depth: png::BitDepth, palette: Option<Vec<u8>>, data: &[u8]) {
    let file = BufWriter::new(File::create(path).unwrap());
    let mut enc = png::Encoder::new(file, w, h);
    enc.set_color(color);
    enc.set_depth(depth);
    if let Some(p) = palette {
        enc.set_palette(p);
    }
    enc.write_header().unwrap().write_image_data(data).unwrap();
}

#[test]
fn png_round_trip_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for channels in [1, 3] {
        let data: Vec<u8> = (0..13 * 7 * channels).map(|_| rng.gen()).collect();
        let img = ImageBuffer::new(13, 7, channels, data).unwrap();
        let path = dir.path().join(format!("c{channels}.png"));
        save_png(&img, &path).unwrap();
        let back = load_png(&path).unwrap();
        assert_eq!((back.width(), back.height(), back.channels()), (13, 7, channels));
        assert_eq!(back.data(), img.data());
    }
}

#[test]
fn sixteen_bit_png_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("deep.png");
    write_raw_png(&path, 4, 4, png::ColorType::Rgb, png::BitDepth::Sixteen, None, &[7u8; 4 * 4 * 6]);
    let err = load_png(&path).unwrap_err().to_string();
    assert!(err.contains("deep.png"), "{err}");
}

#[test]
fn palette_png_matches_reference_decoder() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pal.png");
    let palette = vec![255, 0, 0, 0, 255, 0, 0, 0, 255, 10, 20, 30];
    let indices: Vec<u8> = (0..6 * 5).map(|i| (i % 4) as u8).collect();
    write_raw_png(&path, 6, 5, png::ColorType::Indexed, png::BitDepth::Eight, Some(palette), &indices);

    let mut decoder = png::Decoder::new(std::io::BufReader::new(File::open(&path).unwrap()));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().unwrap();
    let mut buf = vec![0; reader.output_buffer_size().unwrap()];
    let info = reader.next_frame(&mut buf).unwrap();
    assert_eq!(info.color_type, png::ColorType::Rgb);

    let ours = load_png(&path).unwrap();
    assert_eq!(ours.channels(), 3);
    assert_eq!(ours.data(), &buf[..info.buffer_size()]);
}

#[test]
fn missing_file_names_the_path() {
    let err = load_png(Path::new("/nonexistent/x.png")).unwrap_err().to_string();
    assert!(err.contains("/nonexistent/x.png"), "{err}");
}

#[test]
fn bicubic_halving_of_a_ramp_matches_hand_weights() {
    // Row [0, 1, 2, 3] halved with an antialiased a = -0.5 kernel. For output 1
    // the centre is 1.5 (1-based); stretched taps at distances 0.25, 0.75,
    // 1.25, 1.75 weigh 0.8671875, 0.2265625, -0.0703125, -0.0234375 (twice each,
    // total 2); clamping folds the left taps onto pixel 0 and the far right onto 3.
    let first = (0.8671875 * 1.0 + 0.2265625 * 2.0 + (-0.0703125 - 0.0234375) * 3.0) / 2.0;
    assert!((first - 0.51953125f64).abs() < 1e-15);
    let row = [first, 3.0 - first];
    let img = FloatImage::from_fn(4, 4, 1, |x, y, _| (x + 4 * y) as f64);
    let out = bicubic_resize(&img, Ratio::down(2), true).unwrap();
    assert_eq!((out.width(), out.height()), (2, 2));
    for y in 0..2 {
        for x in 0..2 {
            let want = row[x] + 4.0 * row[y];
            assert!((out.get(x, y, 0) - want).abs() < 1e-12, "({x},{y}) {} vs {want}", out.get(x, y, 0));
        }
    }
}

#[test]
fn bicubic_preserves_constants_and_sizes() {
    let img = FloatImage::filled(17, 9, 3, 77.0);
    for ratio in [Ratio::down(2), Ratio::down(3), Ratio::down(4), Ratio::up(2), Ratio::up(3), Ratio::new(2, 3).unwrap()] {
        for aa in [true, false] {
            let out = bicubic_resize(&img, ratio, aa).unwrap();
            assert_eq!(out.width(), (17 * ratio.num).div_ceil(ratio.den));
            assert_eq!(out.height(), (9 * ratio.num).div_ceil(ratio.den));
            assert!(out.data().iter().all(|v| (v - 77.0).abs() < 1e-9));
        }
    }
}

#[test]
fn bicubic_scale_one_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let img = FloatImage::from_fn(11, 6, 3, |_, _, _| rng.gen_range(0.0..255.0));
    assert_eq!(bicubic_resize(&img, Ratio::up(1), true).unwrap(), img);
    assert_eq!(bicubic_resize(&img, Ratio::new(3, 3).unwrap(), false).unwrap(), img);
}

#[test]
fn degrade_crops_to_a_multiple_first() {
    let img = FloatImage::filled(50, 31, 3, 10.0);
    let lr = imaging::degrade(&img, 4).unwrap();
    assert_eq!((lr.width(), lr.height()), (12, 7));
}

#[test]
fn gaussian_impulse_response_is_the_outer_product() {
    let mut img = FloatImage::filled(15, 15, 1, 0.0);
    img.data_mut()[7 * 15 + 7] = 1.0;
    let out = gaussian_blur_7x7(&img, 1.4).unwrap();
    let k = imaging::gaussian_kernel(7, 1.4);
    let total: f64 = out.data().iter().sum();
    assert!((total - 1.0).abs() < 1e-12);
    for y in 0..15 {
        for x in 0..15 {
            let (dx, dy) = (x as isize - 7, y as isize - 7);
            let want = if dx.abs() <= 3 && dy.abs() <= 3 {
                k[(dx + 3) as usize] * k[(dy + 3) as usize]
            } else {
                0.0
            };
            assert!((out.get(x, y, 0) - want).abs() < 1e-15);
        }
    }
}

#[test]
fn gaussian_matches_full_2d_convolution() {
    let sigma = 1.4;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let img = FloatImage::from_fn(20, 13, 1, |_, _, _| rng.gen_range(0.0..255.0));
    let mut k2 = [[0.0f64; 7]; 7];
    let mut total = 0.0;
    for (dy, row) in k2.iter_mut().enumerate() {
        for (dx, v) in row.iter_mut().enumerate() {
            let (a, b) = (dx as f64 - 3.0, dy as f64 - 3.0);
            *v = (-(a * a + b * b) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    let out = gaussian_blur_7x7(&img, sigma).unwrap();
    for y in 0..13isize {
        for x in 0..20isize {
            let mut acc = 0.0;
            for dy in -3..=3isize {
                for dx in -3..=3isize {
                    let sx = (x + dx).clamp(0, 19) as usize;
                    let sy = (y + dy).clamp(0, 12) as usize;
                    acc += k2[(dy + 3) as usize][(dx + 3) as usize] / total * img.get(sx, sy, 0);
                }
            }
            assert!((out.get(x as usize, y as usize, 0) - acc).abs() < 1e-6);
        }
    }
    assert!(gaussian_blur_7x7(&img, 0.0).is_err());
}

#[test]
fn sobel_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let img = FloatImage::from_fn(9, 8, 1, |_, _, _| rng.gen_range(0.0..40.0));
    let gx_k = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let gy_k = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
    let out = sobel_magnitude(&img).unwrap();
    for y in 0..8isize {
        for x in 0..9isize {
            let (mut gx, mut gy) = (0.0, 0.0);
            for j in 0..3 {
                for i in 0..3 {
                    let sx = (x + i as isize - 1).clamp(0, 8) as usize;
                    let sy = (y + j as isize - 1).clamp(0, 7) as usize;
                    gx += gx_k[j][i] * img.get(sx, sy, 0);
                    gy += gy_k[j][i] * img.get(sx, sy, 0);
                }
            }
            let want = (gx * gx + gy * gy).sqrt().min(255.0);
            assert!((out.get(x as usize, y as usize, 0) - want).abs() < 1e-9);
        }
    }
}

#[test]
fn sobel_saturates_on_a_hard_step_and_is_linear_below_the_cap() {
    let step = FloatImage::from_fn(8, 8, 1, |x, _, _| if x < 4 { 0.0 } else { 255.0 });
    let out = sobel_magnitude(&step).unwrap();
    assert_eq!(out.get(3, 4, 0), 255.0);
    assert_eq!(out.get(0, 4, 0), 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let small = FloatImage::from_fn(8, 8, 1, |_, _, _| rng.gen_range(0.0..10.0));
    let a = sobel_magnitude(&small).unwrap();
    let b = sobel_magnitude(&small.map(|v| 3.0 * v)).unwrap();
    for (u, v) in a.data().iter().zip(b.data()) {
        assert!((3.0 * u - v).abs() < 1e-9);
    }
    assert!(sobel_magnitude(&FloatImage::filled(4, 4, 3, 0.0)).is_err());
}

#[test]
fn luma_of_mid_gray() {
    let y = rgb_to_y(&FloatImage::filled(2, 2, 3, 128.0)).unwrap();
    assert!((y.get(0, 0, 0) - 125.9).abs() < 0.05);
    let black = rgb_to_y(&FloatImage::filled(1, 1, 3, 0.0)).unwrap();
    let white = rgb_to_y(&FloatImage::filled(1, 1, 3, 255.0)).unwrap();
    assert!((black.get(0, 0, 0) - 16.0).abs() < 1e-12);
    assert!((white.get(0, 0, 0) - 235.0).abs() < 1e-9);
}

#[test]
fn tensor_bridge_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let img = FloatImage::from_fn(5, 4, 3, |_, _, _| rng.gen_range(0.0..255.0));
    let t = imaging::images_to_tensor::<f64>(&[&img, &img]).unwrap();
    let back = imaging::tensor_to_image(&t, 1).unwrap();
    for (a, b) in img.data().iter().zip(back.data()) {
        assert!((a - b).abs() < 1e-9);
    }
}

use std::path::Path;

use servoscope::core::nn::{layer_specs, Network};
use servoscope::core::sim::{generate_demonstration, CameraModel, ExpertConfig, Scene};
use servoscope::core::vision::ImageState;
use servoscope::demos::{frame_name, read_demo, write_demo};
use servoscope::{pgm, weights, HarnessError};

fn small_net() -> Network {
    Network::new(&layer_specs(16, &[5, 4], 3), 11).unwrap()
}

#[test]
fn weights_round_trip_is_bit_exact() {
    let net = small_net();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.tfn");
    weights::save(&net, &path).unwrap();
    let back = weights::load(&path).unwrap();
    let a: Vec<u64> = net.parameters().map(f64::to_bits).collect();
    let b: Vec<u64> = back.parameters().map(f64::to_bits).collect();
    assert_eq!(a, b);
    assert_eq!(net.specs(), back.specs());
}

#[test]
fn weights_header_layout() {
    let net = small_net();
    let bytes = weights::encode(&net);
    assert_eq!(&bytes[..4], b"TFN1");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 3);
    // first layer: 16 -> 5, tanh
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 16);
    assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 5);
    assert_eq!(bytes[16], 0);
    let header = 8 + 3 * 9;
    assert_eq!(bytes.len(), header + net.parameter_count() * 8);
    // first weight follows the header directly
    let w0 = f64::from_le_bytes(bytes[header..header + 8].try_into().unwrap());
    assert_eq!(w0.to_bits(), net.layers()[0].weights[0].to_bits());
    // the last 8 bytes are the final bias entry
    let last = f64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    assert_eq!(last.to_bits(), net.layers()[2].bias[2].to_bits());
}

#[test]
fn weights_format_errors() {
    let net = small_net();
    let good = weights::encode(&net);
    let origin = Path::new("mem");

    let mut magic = good.clone();
    magic[..4].copy_from_slice(b"XXXX");
    assert!(matches!(weights::decode(&magic, origin), Err(HarnessError::Format { .. })));

    let truncated = &good[..good.len() - 5];
    assert!(matches!(weights::decode(truncated, origin), Err(HarnessError::Format { .. })));

    let mut wrong_dims = good.clone();
    wrong_dims[12..16].copy_from_slice(&6u32.to_le_bytes());
    assert!(matches!(weights::decode(&wrong_dims, origin), Err(HarnessError::Format { .. })));

    let mut huge = good.clone();
    huge[4..8].copy_from_slice(&u32::MAX.to_le_bytes());
    assert!(matches!(weights::decode(&huge, origin), Err(HarnessError::Format { .. })));

    let mut bad_act = good;
    bad_act[16] = 9;
    assert!(matches!(weights::decode(&bad_act, origin), Err(HarnessError::Format { .. })));

    assert!(matches!(weights::decode(b"TF", origin), Err(HarnessError::Format { .. })));
}

#[test]
fn pgm_round_trip_and_errors() {
    let img = ImageState::new(3, 2, vec![0, 1, 2, 253, 254, 255]).unwrap();
    let bytes = pgm::encode(&img);
    assert_eq!(&bytes[..11], b"P5\n3 2\n255\n");
    let origin = Path::new("mem");
    assert_eq!(pgm::decode(&bytes, origin).unwrap(), img);

    let commented = b"P5\n# made by hand\n3 2\n255\n\x00\x01\x02\xfd\xfe\xff";
    assert_eq!(pgm::decode(commented, origin).unwrap(), img);

    assert!(pgm::decode(b"P2\n3 2\n255\n", origin).is_err());
    assert!(pgm::decode(b"P5\n3 2\n65535\n", origin).is_err());
    assert!(pgm::decode(&bytes[..bytes.len() - 1], origin).is_err());
    assert!(pgm::decode(b"P5\n3", origin).is_err());
}

#[test]
fn demo_directory_round_trip() {
    let cam = CameraModel::default_for(32, 32);
    let expert = ExpertConfig {
        noise_seed: 3,
        max_frames: 5,
        ..ExpertConfig::default()
    };
    let demo = generate_demonstration(&Scene::default(), &cam, &expert).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_demo(&demo, dir.path()).unwrap();
    for i in 0..demo.frames.len() {
        assert!(dir.path().join(frame_name(i)).is_file());
    }
    assert_eq!(frame_name(7), "frame_0007.pgm");

    let stored = read_demo(dir.path()).unwrap();
    assert_eq!(stored.frames, demo.frames);
    let m = &stored.manifest;
    assert_eq!(m.frames, demo.frames.len());
    assert_eq!(m.alpha, 0.6);
    assert_eq!(m.seed, 3);
    assert_eq!((m.image_w, m.image_h), (32, 32));
    let (o, t) = demo.ground_truth[0];
    assert_eq!(m.ground_truth[0], [[o.x, o.y, o.z], [t.x, t.y, t.z]]);

    let text = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    let keys: Vec<&str> = json.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys.len(), 6);
    for k in ["frames", "alpha", "seed", "ground_truth", "image_w", "image_h"] {
        assert!(keys.contains(&k), "{k}");
    }
}

#[test]
fn demo_with_missing_frame_is_rejected() {
    let cam = CameraModel::default_for(32, 32);
    let demo = generate_demonstration(&Scene::default(), &cam, &ExpertConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_demo(&demo, dir.path()).unwrap();
    std::fs::remove_file(dir.path().join(frame_name(1))).unwrap();
    assert!(read_demo(dir.path()).is_err());
}

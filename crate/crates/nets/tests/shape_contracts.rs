use std::time::Instant;

use limbpose_nets::{DetectionNetSpec, Network, NetError, RegressionInput, RegressionNetSpec, Tensor};

fn ramp(shape: [usize; 5]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|i| ((i * 31) % 17) as f32 / 17.0 - 0.5).collect()).unwrap()
}

#[test]
fn full_width_detection_maps_clip_to_twenty_probability_maps() {
    let mut net = Network::detection(DetectionNetSpec::new(96, 128, 3), 0).unwrap();
    let start = Instant::now();
    let y = net.predict(&ramp([1, 1, 3, 96, 128])).unwrap();
    eprintln!("detection forward: {:.2?}", start.elapsed());
    assert_eq!(y.shape, [1, 20, 3, 96, 128]);
    assert!(y.data.iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn full_width_regression_maps_stacked_input_to_twenty_maps() {
    let spec = RegressionNetSpec::new(96, 128, 3, RegressionInput::DepthAndAffinity);
    let mut net = Network::regression(spec, 0).unwrap();
    let start = Instant::now();
    let y = net.predict(&ramp([1, 21, 3, 96, 128])).unwrap();
    eprintln!("regression forward: {:.2?}", start.elapsed());
    assert_eq!(y.shape, [1, 20, 3, 96, 128]);
    assert!(matches!(net.predict(&ramp([1, 20, 3, 96, 128])), Err(NetError::Shape(_))));
}

#[test]
fn single_frame_clips_keep_per_layer_spatial_shapes() {
    let spec3 = DetectionNetSpec {
        base_width: 8,
        ..DetectionNetSpec::new(96, 128, 3)
    };
    let spec1 = DetectionNetSpec { frames: 1, ..spec3 };
    let s3 = Network::detection(spec3, 0).unwrap().stage_shapes().unwrap();
    let s1 = Network::detection(spec1, 0).unwrap().stage_shapes().unwrap();
    for ((n3, a), (n1, b)) in s3.iter().zip(&s1) {
        assert_eq!(n3, n1);
        assert_eq!((a[1], a[3], a[4]), (b[1], b[3], b[4]), "{n3}");
        assert_eq!((a[2], b[2]), (3, 1), "{n3}");
    }
    let mut net = Network::detection(spec1, 0).unwrap();
    let y = net.predict(&ramp([1, 1, 1, 96, 128])).unwrap();
    assert_eq!(y.shape, [1, 20, 1, 96, 128]);
    let mut reg = Network::regression(RegressionNetSpec::new(96, 128, 1, RegressionInput::DepthOnly), 0).unwrap();
    assert_eq!(reg.predict(&ramp([1, 1, 1, 96, 128])).unwrap().shape, [1, 20, 1, 96, 128]);
}

use pyqpadapt::*;

#[test]
fn counts_match_published_tables() {
    assert_eq!(param_count("dcad", "vanilla", None).unwrap(), 296_641);
    assert_eq!(param_count("dcad", "qp-adaptive", None).unwrap(), 297_218);
    assert_eq!(param_count("vrcnn", "vanilla", None).unwrap(), 54_512);
    assert_eq!(param_count("vrcnn", "qp-adaptive", None).unwrap(), 54_673);
    assert!(param_count("alexnet", "vanilla", None).is_err());
}

#[test]
fn fresh_network_is_identity() {
    let net = PyNetwork::new("vrcnn", "qp-adaptive", 3, None).unwrap();
    let pixels: Vec<f32> = (0..48).map(|i| i as f32 / 48.0).collect();
    assert_eq!(net.forward(pixels.clone(), 6, 8, Some(32)).unwrap(), pixels);
    assert!(net.forward(pixels.clone(), 6, 8, None).is_err());
    assert!(net.forward(pixels, 5, 8, Some(32)).is_err());
    assert_eq!(net.theta().len(), 6);
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("n.qfck");
    let net = PyNetwork::new("liu", "vanilla", 1, Some(4)).unwrap();
    net.save(path.clone(), "liu".into(), 1, 0, vec![22]).unwrap();
    let back = PyNetwork::load(path.clone(), None).unwrap();
    assert_eq!(back.param_count(), net.param_count());
    let promoted = PyNetwork::load(path, Some("qp-adaptive")).unwrap();
    assert_eq!(promoted.mode(), "qp-adaptive");
}

#[test]
fn codec_and_metrics() {
    let img = synthetic_image(1, 0, 32);
    let (recon, bits) = encode_decode(img.clone(), 32, 32, 37).unwrap();
    assert!(bits > 0.0);
    let to_f = |v: &[u8]| v.iter().map(|&p| p as f64).collect::<Vec<_>>();
    let p = psnr(to_f(&img), to_f(&recon), 255.0).unwrap();
    assert!(p.is_finite() && p > 20.0);
    assert_eq!(psnr(to_f(&img), to_f(&img), 255.0).unwrap(), f64::INFINITY);
    let anchor = vec![(100.0, 30.0), (200.0, 33.0), (400.0, 36.0), (800.0, 39.0)];
    let scaled: Vec<(f64, f64)> = anchor.iter().map(|&(r, q)| (0.9 * r, q)).collect();
    assert!((bd_rate(anchor.clone(), scaled).unwrap() + 10.0).abs() < 1e-9);
    assert_eq!(bd_psnr(anchor.clone(), anchor).unwrap(), 0.0);
}

#[test]
fn oracle_functions() {
    let (adapted, mse) = adapt_filter(vec![1.0, 2.0], vec![0.0, 0.0], vec![0.5, 1.5]).unwrap();
    assert_eq!(adapted, vec![0.5, 1.5]);
    assert_eq!(mse, 0.0);
    let f = wiener_factors(vec![1.0], vec![1.0], vec![1.0]).unwrap();
    assert_eq!(f, vec![0.5]);
    let (slope, _) = noise_power_slope(vec![22, 27, 32, 37], 1 << 16, 0).unwrap();
    assert!((slope - 2.0).abs() < 0.1);
    assert!((qsq_norm(35).unwrap() - 2.0).abs() < 1e-12);
    assert!((qstep(10).unwrap() - 2.0).abs() < 1e-12);
}

use cyclebnn_web::{lr_curve, qe_curve, quantizer_staircase, schedule_curve};

#[test]
fn schedule_curve_matches_cli_defaults() {
    let bits = schedule_curve(600, 8, 2, 6, "anchored").unwrap();
    assert_eq!(bits.len(), 600);
    assert_eq!(&bits[..16], &[2; 15].iter().copied().chain([3]).collect::<Vec<_>>()[..]);
    assert!(schedule_curve(600, 8, 2, 6, "literal").unwrap().iter().all(|&b| b <= 4));
    assert!(schedule_curve(10, 2, 0, 6, "anchored").is_err());
    assert!(schedule_curve(10, 2, 2, 6, "sawtooth").is_err());
}

#[test]
fn lr_curve_is_cosine() {
    let lr = lr_curve(4, 1e-3).unwrap();
    assert_eq!(lr[0], 1e-3);
    assert!((lr[2] - 5e-4).abs() < 1e-15);
    assert!(lr.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn qe_curve_starts_at_zero_and_saturates() {
    let qe = qe_curve(0.50, -0.11, 0.38, 12, false).unwrap();
    assert_eq!(qe.len(), 12);
    assert!(qe[0].abs() < 1e-9);
    assert!((qe[7] - 0.250).abs() < 0.01, "{}", qe[7]);
    assert!((qe[10] - qe[11]).abs() < 1e-3);
    assert!(qe_curve(0.5, 0.0, 0.0, 4, false).is_err());
}

#[test]
fn staircase_has_two_to_the_bits_levels() {
    for bits in 1..=4 {
        let pts = quantizer_staircase(bits, -1.5, 1.5, 2001).unwrap();
        let mut levels: Vec<f64> = pts.chunks(2).map(|p| p[1]).collect();
        levels.dedup();
        assert_eq!(levels.len(), 1 << bits);
        assert_eq!(pts[0], -1.5);
        assert_eq!(pts[pts.len() - 2], 1.5);
    }
    assert!(quantizer_staircase(3, 1.0, -1.0, 10).is_err());
    assert!(quantizer_staircase(0, -1.0, 1.0, 10).is_err());
}

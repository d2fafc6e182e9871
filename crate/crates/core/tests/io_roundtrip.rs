use pnp_pbcd::detector::{Mask, ScoreMap};
use pnp_pbcd::io::{read_hsi, read_mask, read_scores, write_hsi, write_mask, write_scores};
use pnp_pbcd::Tensor3;

#[test]
fn hsi_layout_is_little_endian_i_fastest() {
    let t = Tensor3::from_fn((2, 3, 2), |i, j, k| (i + 10 * j + 100 * k) as f64);
    let mut buf = Vec::new();
    write_hsi(&mut buf, &t).unwrap();
    assert_eq!(&buf[..4], b"HSI1");
    assert_eq!(buf[4..16], [2, 0, 0, 0, 3, 0, 0, 0, 2, 0, 0, 0]);
    assert_eq!(buf.len(), 16 + 8 * 12);
    // second stored value is (i=1, j=0, k=0)
    assert_eq!(f64::from_le_bytes(buf[24..32].try_into().unwrap()), 1.0);
    assert_eq!(read_hsi(&buf[..]).unwrap(), t);
}

#[test]
fn special_values_survive_hsi() {
    let vals = vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300, -7.25, 1.0 / 3.0];
    let t = Tensor3::new((1, 2, 3), vals.clone()).unwrap();
    let mut buf = Vec::new();
    write_hsi(&mut buf, &t).unwrap();
    let back = read_hsi(&buf[..]).unwrap();
    for (a, b) in back.data().iter().zip(&vals) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn mask_round_trip_and_rejects_other_bytes() {
    let m = Mask::from_fn((3, 4), |i, j| (i + j) % 3 == 0);
    let mut buf = Vec::new();
    write_mask(&mut buf, &m).unwrap();
    assert_eq!(&buf[..4], b"MSK1");
    assert_eq!(read_mask(&buf[..]).unwrap(), m);
    let last = buf.len() - 1;
    buf[last] = 2;
    assert!(read_mask(&buf[..]).is_err());
}

#[test]
fn scores_keep_every_bit() {
    let values: Vec<f64> = (0..12).map(|k| (k as f64 + 0.1).sqrt() * std::f64::consts::PI).collect();
    let s = ScoreMap::new((4, 3), values.clone()).unwrap();
    let mut buf = Vec::new();
    write_scores(&mut buf, &s).unwrap();
    let back = read_scores(&buf[..]).unwrap();
    assert_eq!(back.dims(), (4, 3));
    for (a, b) in back.values().iter().zip(&values) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

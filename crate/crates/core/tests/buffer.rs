use cacto::buffer::ReplayBuffer;
use cacto::envs::TimeState;
use cacto::nets::TOSample;
use cacto::Error;
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tagged(tag: usize) -> TOSample<f64> {
    TOSample {
        state: TimeState::from_slice(&[tag as f64], 0),
        control: DVector::from_element(1, 0.0),
        v_bar: tag as f64,
        v_bar_x: DVector::from_element(1, 0.0),
        state_after: TimeState::from_slice(&[tag as f64], 1),
    }
}

fn tags(buf: &ReplayBuffer<f64>) -> Vec<usize> {
    buf.iter().map(|s| s.v_bar as usize).collect()
}

#[test]
fn push_below_capacity() {
    let mut buf = ReplayBuffer::new(10).unwrap();
    assert_eq!(buf.push_many((0..5).map(tagged)), 5);
    assert_eq!(buf.len(), 5);
}

#[test]
fn overflow_evicts_oldest_first() {
    let mut buf = ReplayBuffer::new(10).unwrap();
    buf.push_many((0..15).map(tagged));
    assert_eq!(buf.len(), 10);
    assert_eq!(tags(&buf), (5..15).collect::<Vec<_>>());
    buf.push_many((15..18).map(tagged));
    assert_eq!(tags(&buf), (8..18).collect::<Vec<_>>());
}

#[test]
fn empty_push_is_a_no_op() {
    let mut buf = ReplayBuffer::<f64>::new(4).unwrap();
    assert_eq!(buf.push_many(std::iter::empty()), 0);
    assert!(buf.is_empty());
}

#[test]
fn single_sample_is_repeated() {
    let mut buf = ReplayBuffer::new(4).unwrap();
    buf.push_many([tagged(7)]);
    let batch = buf.sample_minibatch(4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(batch.len(), 4);
    assert!(batch.iter().all(|s| s.v_bar == 7.0));
}

#[test]
fn sampling_empty_buffer_fails() {
    let buf = ReplayBuffer::<f64>::new(4).unwrap();
    assert!(matches!(
        buf.sample_minibatch(1, &mut ChaCha8Rng::seed_from_u64(0)),
        Err(Error::Empty(_))
    ));
}

#[test]
fn same_rng_state_gives_same_batch() {
    let mut buf = ReplayBuffer::new(100).unwrap();
    buf.push_many((0..50).map(tagged));
    let a = buf.sample_minibatch(16, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = buf.sample_minibatch(16, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn draws_are_uniform_over_indices() {
    let mut buf = ReplayBuffer::new(10).unwrap();
    buf.push_many((0..10).map(tagged));
    let draws = 100_000;
    let batch = buf.sample_minibatch(draws, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let mut counts = [0usize; 10];
    for s in &batch {
        counts[s.v_bar as usize] += 1;
    }
    // Binomial(1e5, 0.1): sigma of the frequency is sqrt(0.09 / 1e5).
    let sigma = (0.1 * 0.9 / draws as f64).sqrt();
    let mut chi_sq = 0.0;
    for &c in &counts {
        let freq = c as f64 / draws as f64;
        assert!((freq - 0.1).abs() < 3.0 * sigma, "frequency {freq}");
        let expected = draws as f64 / 10.0;
        chi_sq += (c as f64 - expected).powi(2) / expected;
    }
    // 99.9th percentile of chi-square with 9 degrees of freedom.
    assert!(chi_sq < 27.88, "chi-square {chi_sq}");
}

#[test]
fn dump_then_restore_preserves_order_and_values() {
    let mut buf = ReplayBuffer::new(4).unwrap();
    buf.push_many((0..6).map(tagged));
    let mut bytes = Vec::new();
    buf.dump(&mut bytes, "toy1d", 1, 1, 5).unwrap();
    let (back, header) = ReplayBuffer::<f64>::restore(bytes.as_slice(), 4).unwrap();
    assert_eq!(header.model, "toy1d");
    assert_eq!((header.n, header.m, header.lookahead, header.count), (1, 1, 5, 4));
    assert_eq!(tags(&back), vec![2, 3, 4, 5]);
    assert_eq!(back.iter().collect::<Vec<_>>(), buf.iter().collect::<Vec<_>>());
}

#[test]
fn restore_rejects_foreign_bytes() {
    assert!(ReplayBuffer::<f64>::restore(&b"NOTABUFFER______"[..], 4).is_err());
}

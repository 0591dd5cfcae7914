use std::collections::VecDeque;

use kd_core::memory_bank::{BankPair, MemoryBank};
use kd_core::KdError;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Reference model: a plain deque of (tag, row) truncated from the front.
fn model_enqueue(model: &mut VecDeque<(u64, Vec<f64>)>, capacity: usize, batch: &Array2<f64>, tags: &[u64]) {
    for (row, &tag) in batch.outer_iter().zip(tags) {
        model.push_back((tag, row.to_vec()));
        if model.len() > capacity {
            model.pop_front();
        }
    }
}

fn matches_model(bank: &MemoryBank<f64>, model: &VecDeque<(u64, Vec<f64>)>) -> bool {
    bank.fill() == model.len()
        && bank.is_ready() == (model.len() == bank.capacity())
        && bank.entries().zip(model).all(|((t, r), (mt, mr))| t == *mt && r == mr.as_slice())
}

#[test]
fn randomized_sequences_match_deque_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10_000 {
        let capacity = rng.random_range(1..=24);
        let dim = rng.random_range(1..=4);
        let mut bank = MemoryBank::<f64>::new(capacity, dim).unwrap();
        let mut model = VecDeque::new();
        let mut next = 0u64;
        for _ in 0..rng.random_range(1..=12) {
            let rows = rng.random_range(0..=capacity);
            let batch = Array2::from_shape_simple_fn((rows, dim), || rng.random::<f64>());
            let tags: Vec<u64> = (next..next + rows as u64).collect();
            next += rows as u64;
            bank.enqueue_tagged(batch.view(), &tags).unwrap();
            model_enqueue(&mut model, capacity, &batch, &tags);
            assert!(matches_model(&bank, &model));
        }
    }
}

#[test]
fn oversized_batch_is_rejected_and_bank_unchanged() {
    let mut bank = MemoryBank::<f64>::new(3, 2).unwrap();
    bank.enqueue_batch(Array2::ones((2, 2)).view()).unwrap();
    let before = bank.clone();
    assert!(matches!(
        bank.enqueue_batch(Array2::zeros((4, 2)).view()),
        Err(KdError::BatchTooLarge { batch: 4, capacity: 3 })
    ));
    assert_eq!(bank, before);
}

#[test]
fn pair_stays_in_lockstep() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut pair = BankPair::<f64>::new(12, 3).unwrap();
    for step in 0..20u64 {
        let t = Array2::from_shape_simple_fn((4, 3), || rng.random::<f64>());
        let s = Array2::from_shape_simple_fn((4, 3), || rng.random::<f64>());
        let ids: Vec<u64> = (0..4).map(|i| step * 4 + i).collect();
        pair.enqueue(t.view(), s.view(), &ids).unwrap();
        assert_eq!(pair.teacher.tags(), pair.student.tags());
        assert_eq!(pair.teacher.fill(), pair.student.fill());
    }
    assert!(pair.is_ready());
}

proptest! {
    #[test]
    fn fill_never_exceeds_capacity(capacity in 1usize..20, batches in proptest::collection::vec(0usize..20, 0..15)) {
        let mut bank = MemoryBank::<f64>::new(capacity, 2).unwrap();
        let mut total = 0usize;
        for rows in batches {
            let res = bank.enqueue_batch(Array2::zeros((rows, 2)).view());
            if rows > capacity {
                prop_assert!(res.is_err());
            } else {
                res.unwrap();
                total += rows;
            }
            prop_assert_eq!(bank.fill(), total.min(capacity));
        }
    }

    #[test]
    fn newest_rows_are_kept_in_order(capacity in 1usize..10, rows in proptest::collection::vec(-1e3f64..1e3, 1..40)) {
        let mut bank = MemoryBank::<f64>::new(capacity, 1).unwrap();
        for &v in &rows {
            bank.enqueue_batch(Array2::from_elem((1, 1), v).view()).unwrap();
        }
        let kept: Vec<f64> = bank.entries().map(|(_, r)| r[0]).collect();
        let start = rows.len().saturating_sub(capacity);
        prop_assert_eq!(kept, rows[start..].to_vec());
    }

    #[test]
    fn round_trips_through_entries(capacity in 1usize..10, n in 0usize..10) {
        let n = n.min(capacity);
        let mut bank = MemoryBank::<f64>::new(capacity, 2).unwrap();
        bank.enqueue_batch(Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64).view()).unwrap();
        let entries = bank.entries().map(|(t, r)| (t, r.to_vec())).collect();
        let rebuilt = MemoryBank::from_entries(capacity, 2, entries).unwrap();
        prop_assert_eq!(rebuilt, bank);
    }
}

//! Compare session-split encoding with one dense pass under a
//! block-diagonal mask: same states, fewer attention multiply-adds and a
//! smaller peak heap.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};

use textrec::encoder::{encode_dense_block_diagonal, encode_sessions, IdFusion, ModelConfig, Parameters};
use textrec::verbalize::split_sessions;

struct Counting;

static LIVE: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let live = LIVE.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
        PEAK.fetch_max(live, Ordering::Relaxed);
        System.alloc(layout)
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        LIVE.fetch_sub(layout.size(), Ordering::Relaxed);
        System.dealloc(ptr, layout)
    }
}

#[global_allocator]
static ALLOC: Counting = Counting;

/// Run `f` and return its result with the heap high-water mark above the
/// starting level.
fn peak_bytes<T>(f: impl FnOnce() -> T) -> (T, usize) {
    let base = LIVE.load(Ordering::Relaxed);
    PEAK.store(base, Ordering::Relaxed);
    let out = f();
    (out, PEAK.load(Ordering::Relaxed) - base)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = ModelConfig {
        vocab_size: 100,
        hidden_dim: 16,
        num_heads: 2,
        ffn_dim: 32,
        encoder_layers: 2,
        decoder_layers: 1,
        max_session_len: 64,
        dropout_rate: 0.0,
        id_fusion: IdFusion::Off,
    };
    let params = Parameters::init(&config, 0)?;
    let tokens: Vec<u32> = (0..64).map(|i| 3 + (i * 7) % 97).collect();
    println!(
        "{:>8} {:>12} {:>12} {:>12} {:>12} {:>10}",
        "n x m", "split MACs", "dense MACs", "split peak", "dense peak", "max |diff|"
    );
    for (n, m) in [(1, 64), (2, 32), (4, 16), (8, 8)] {
        let batch = split_sessions(&tokens, n, m)?;
        let (split, split_peak) = peak_bytes(|| encode_sessions(&params, &batch));
        let (dense, dense_peak) = peak_bytes(|| encode_dense_block_diagonal(&params, &batch));
        let (split, dense) = (split?, dense?);
        let diff =
            split.states.as_slice().iter().zip(dense.states.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!(
            "{:>8} {:>12} {:>12} {:>12} {:>12} {:>10.1e}",
            format!("{n}x{m}"),
            split.self_attention_macs,
            dense.self_attention_macs,
            split_peak,
            dense_peak,
            diff
        );
    }
    Ok(())
}

//! Bi-temporal samples: PNG ingestion, augmentation, batching and a
//! synthetic scene generator.

mod augment;
mod batch;
mod io;
mod sample;
mod synth;

pub use augment::{augment, augment_rng, AugmentConfig, Transform};
pub use batch::{batch_indices, batch_iter, collate, epoch_order, Batch, BatchIter, PairSource};
pub use io::{
    binarize_mask, load_dataset, read_mask, read_rgb, to_u8, write_gray, write_mask, write_rgb, write_sample, DatasetManifest,
    ManifestEntry, Split, KINDS,
};
pub use sample::{Mask, Rgb, SamplePair};
pub use synth::{synth_generate, synth_sample, synth_scene, Scene, SynthObject, SynthSpec};

use sha2::{Digest, Sha256};

/// 64-bit seed from labelled parts.
pub fn derive_seed(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

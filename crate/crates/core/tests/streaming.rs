use plfn::error::FormatError;
use plfn::geometry::EncodingConfig;
use plfn::pronet::{ArchSpec, ProgressiveMlp};
use plfn::renderer::LightFieldModel;
use plfn::streamfmt::{load_prefix, pack, read_meta};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn arch_strategy() -> impl Strategy<Value = ArchSpec> {
    (1usize..4, 3usize..6, prop::collection::vec(1usize..5, 1..4)).prop_map(|(out, layers, steps)| {
        let mut w = 0;
        let lod_widths = steps
            .into_iter()
            .map(|s| {
                w += s;
                w
            })
            .collect();
        ArchSpec {
            input_dim: 12,
            output_dim: out,
            num_weight_layers: layers,
            lod_widths,
        }
    })
}

fn model(arch: ArchSpec, seed: u64) -> LightFieldModel {
    let enc = EncodingConfig {
        num_frequencies: 1,
        include_raw: false,
    };
    LightFieldModel::new(ProgressiveMlp::init(arch, seed).unwrap(), enc, None)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn prefix_forward_is_bit_identical(arch in arch_strategy(), seed in 0u64..1000) {
        let m = model(arch.clone(), seed);
        let bytes = pack(&m).unwrap();
        let meta = read_meta(&bytes).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f32> = (0..20 * 12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for k in 1..=arch.num_lods() {
            let loaded = load_prefix(&bytes[..meta.prefix_len(k) as usize], k).unwrap();
            prop_assert_eq!(
                meta.payload_bytes(k),
                4 * arch.param_count(arch.lod(k).unwrap()) as u64
            );
            for j in 1..=k {
                let a = m.net.forward_batch(&xs, 20, m.net.lod(j).unwrap()).unwrap();
                let b = loaded.net.forward_batch(&xs, 20, loaded.net.lod(j).unwrap()).unwrap();
                let (a, b): (Vec<u32>, Vec<u32>) =
                    (a.iter().map(|v| v.to_bits()).collect(), b.iter().map(|v| v.to_bits()).collect());
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn any_payload_bit_flip_names_its_chunk(arch in arch_strategy(), seed in 0u64..1000, pick in 0.0f64..1.0, bit in 0u8..8) {
        let m = model(arch.clone(), seed);
        let mut bytes = pack(&m).unwrap();
        let meta = read_meta(&bytes).unwrap();
        let start = meta.header_bytes as usize;
        let pos = start + ((bytes.len() - start) as f64 * pick) as usize;
        let pos = pos.min(bytes.len() - 1);
        bytes[pos] ^= 1 << bit;
        let chunk = meta
            .chunks
            .iter()
            .find(|c| (c.offset as usize..(c.offset + c.length) as usize).contains(&pos))
            .unwrap()
            .lod;
        let err = load_prefix(&bytes, arch.num_lods()).unwrap_err();
        let is_checksum_error_for_chunk = matches!(err, FormatError::ChecksumMismatch { chunk: c, .. } if c == chunk);
        prop_assert!(is_checksum_error_for_chunk);
    }

    #[test]
    fn truncation_is_detected(arch in arch_strategy(), seed in 0u64..1000, cut in 0.0f64..1.0) {
        let m = model(arch.clone(), seed);
        let bytes = pack(&m).unwrap();
        let len = ((bytes.len() as f64) * cut) as usize;
        let top = arch.num_lods();
        match load_prefix(&bytes[..len], top) {
            Err(FormatError::TruncatedHeader) | Err(FormatError::TruncatedChunk { .. }) => {}
            other => prop_assert!(false, "unexpected {:?}", other.map(|_| ())),
        }
    }
}

#[test]
fn default_arch_payload_sizes() {
    let arch = ArchSpec::default();
    let m = LightFieldModel::new(ProgressiveMlp::init(arch, 0).unwrap(), EncodingConfig::default(), None);
    let bytes = pack(&m).unwrap();
    let meta = read_meta(&bytes).unwrap();
    let prefixes: Vec<u64> = (1..=4).map(|k| meta.payload_bytes(k)).collect();
    assert_eq!(prefixes, [543_248, 2_135_056, 4_775_440, 8_464_400]);
    let chunks: Vec<u64> = meta.chunks.iter().map(|c| c.length).collect();
    assert_eq!(chunks, [4 * 135_812, 4 * 397_952, 4 * 660_096, 4 * 922_240]);
    assert_eq!(meta.total_len() as usize, bytes.len());
}

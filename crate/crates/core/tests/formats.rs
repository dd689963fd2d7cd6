use proptest::prelude::*;
use tommer::repio::{Checkpoint, TensorF32};

fn tensor_strategy() -> impl Strategy<Value = TensorF32> {
    prop::collection::vec(1usize..5, 1..4).prop_flat_map(|shape| {
        let numel: usize = shape.iter().product();
        prop::collection::vec(-1e6f32..1e6, numel)
            .prop_map(move |data| TensorF32::new(shape.clone(), data).unwrap())
    })
}

proptest! {
    #[test]
    fn tensor_bytes_round_trip(t in tensor_strategy()) {
        let bytes = t.to_bytes();
        prop_assert_eq!(bytes.len(), t.encoded_len());
        prop_assert_eq!(TensorF32::from_bytes(&bytes).unwrap(), t);
    }

    #[test]
    fn truncated_tensor_is_rejected(t in tensor_strategy(), cut in 1usize..64) {
        let bytes = t.to_bytes();
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(TensorF32::from_bytes(&bytes[..keep]).is_err());
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..96)) {
        let _ = TensorF32::from_bytes(&bytes);
        let _ = Checkpoint::from_bytes(&bytes);
        let mut tomr = b"TOMR".to_vec();
        tomr.extend_from_slice(&bytes);
        let _ = TensorF32::from_bytes(&tomr);
        let mut tomc = b"TOMC".to_vec();
        tomc.extend_from_slice(&bytes);
        let _ = Checkpoint::from_bytes(&tomc);
    }
}

#[test]
fn wrong_magic_and_version() {
    let t = TensorF32::new(vec![2], vec![1.0, 2.0]).unwrap();
    let mut bytes = t.to_bytes();
    bytes[0] = b'X';
    assert!(matches!(
        TensorF32::from_bytes(&bytes),
        Err(tommer::Error::BadMagic { .. })
    ));
    let mut bytes = t.to_bytes();
    bytes[4] = 2;
    assert!(matches!(
        TensorF32::from_bytes(&bytes),
        Err(tommer::Error::UnsupportedVersion(2))
    ));
}

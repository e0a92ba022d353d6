//! Tensor files as produced by external tooling: scores, masks and weights
//! encoded byte by byte here rather than through the library encoder.

use prunelens::pruners::{layerwise_prune, one_shot_prune, threshold_prune_global};
use prunelens::tensor::TensorFile;
use prunelens::{builtin_arch, init_weights, ArchGraph, Error, MaskSet, ScoreProvider, ScoreSet};

enum Payload<'a> {
    F64(&'a [f64]),
    U8(&'a [u8]),
}

fn encode(sections: &[(&str, &[u32], Payload)]) -> Vec<u8> {
    let mut b = b"PLTS".to_vec();
    b.extend(1u16.to_le_bytes());
    b.extend((sections.len() as u32).to_le_bytes());
    for (name, dims, data) in sections {
        b.extend((name.len() as u16).to_le_bytes());
        b.extend(name.as_bytes());
        b.push(match data {
            Payload::F64(_) => 0,
            Payload::U8(_) => 1,
        });
        b.push(dims.len() as u8);
        for d in *dims {
            b.extend(d.to_le_bytes());
        }
        match data {
            Payload::F64(v) => v.iter().for_each(|x| b.extend(x.to_le_bytes())),
            Payload::U8(v) => b.extend(*v),
        }
    }
    b
}

fn lenet5() -> ArchGraph {
    builtin_arch("lenet5").unwrap()
}

fn dims32(arch: &ArchGraph, l: usize) -> Vec<u32> {
    arch.weight_dims(l).iter().map(|&d| d as u32).collect()
}

/// Scores equal to each entry's flat row-major index plus a per-layer offset.
fn index_scores(arch: &ArchGraph) -> Vec<Vec<f64>> {
    let mut offset = 0.0;
    arch.param_counts()
        .iter()
        .map(|&n| {
            let v: Vec<f64> = (0..n).map(|i| offset + i as f64).collect();
            offset += n as f64;
            v
        })
        .collect()
}

fn score_bytes(arch: &ArchGraph, layers: &[Vec<f64>]) -> Vec<u8> {
    let dims: Vec<Vec<u32>> = (0..arch.num_layers()).map(|l| dims32(arch, l)).collect();
    let ids = arch.layer_ids();
    let sections: Vec<(&str, &[u32], Payload)> = (0..arch.num_layers())
        .rev()
        .map(|l| (ids[l], dims[l].as_slice(), Payload::F64(&layers[l])))
        .collect();
    encode(&sections)
}

#[test]
fn ingested_scores_keep_layout_and_order() {
    let arch = lenet5();
    let raw = index_scores(&arch);
    // sections deliberately written in reverse layer order
    let file = TensorFile::decode(&score_bytes(&arch, &raw)).unwrap();
    let scores = ScoreSet::from_file(file, &arch).unwrap();
    assert_eq!(scores.layers(), raw.as_slice());

    // conv weight [out, in, kh, kw]: entry (1, 0, 2, 3) sits at 1*in*kh*kw + 2*kw + 3
    let d = arch.weight_dims(0);
    assert_eq!(d.len(), 4);
    let flat = d[1] * d[2] * d[3] + 2 * d[3] + 3;
    assert_eq!(scores.layer(0)[flat], flat as f64);

    // with distinct increasing scores the global threshold keeps exactly the tail
    let total = arch.total_params();
    let keep = 1000;
    let mask = threshold_prune_global(&scores, keep);
    let mut seen = 0;
    for (l, layer) in mask.layers().iter().enumerate() {
        for (i, &k) in layer.iter().enumerate() {
            assert_eq!(k, raw[l][i] >= (total - keep) as f64);
            seen += usize::from(k);
        }
    }
    assert_eq!(seen, keep);

    let via_provider = one_shot_prune(
        &arch,
        &init_weights(&arch, 0),
        &ScoreProvider::Ingested(scores.clone()),
        1.0 - keep as f64 / total as f64,
    )
    .unwrap();
    assert_eq!(via_provider, mask);

    let counts = prunelens::PrunedCounts {
        counts: arch.param_counts().iter().map(|n| n / 2).collect(),
    };
    let lw = layerwise_prune(&scores, &counts);
    for layer in lw.layers() {
        let n = layer.len();
        assert!(layer.iter().enumerate().all(|(i, &k)| k == (i >= n / 2)));
    }
}

#[test]
fn negative_or_nan_scores_name_the_layer() {
    let arch = lenet5();
    for bad in [-1.0, f64::NAN, f64::INFINITY] {
        let mut raw = index_scores(&arch);
        raw[2][7] = bad;
        let file = TensorFile::decode(&score_bytes(&arch, &raw)).unwrap();
        match ScoreSet::from_file(file, &arch) {
            Err(Error::InvalidScores { layer, .. }) => assert_eq!(layer, arch.layer_id(2)),
            other => panic!("expected InvalidScores, got {other:?}"),
        }
    }
}

#[test]
fn structural_mismatches_are_rejected() {
    let arch = lenet5();
    let raw = index_scores(&arch);
    let ids = arch.layer_ids();
    let good: Vec<Vec<u32>> = (0..arch.num_layers()).map(|l| dims32(&arch, l)).collect();

    // wrong dims on one layer
    let mut bad_dims = good.clone();
    bad_dims[1][0] += 1;
    let longer: Vec<f64> = vec![0.0; bad_dims[1].iter().product::<u32>() as usize];
    let sections: Vec<(&str, &[u32], Payload)> = (0..arch.num_layers())
        .map(|l| {
            let data = if l == 1 { &longer } else { &raw[l] };
            (ids[l], bad_dims[l].as_slice(), Payload::F64(data))
        })
        .collect();
    let err =
        ScoreSet::from_file(TensorFile::decode(&encode(&sections)).unwrap(), &arch).unwrap_err();
    assert!(
        matches!(&err, Error::Shape { layer, .. } if layer == ids[1]),
        "{err}"
    );

    // missing layer
    let sections: Vec<(&str, &[u32], Payload)> = (0..arch.num_layers() - 1)
        .map(|l| (ids[l], good[l].as_slice(), Payload::F64(&raw[l])))
        .collect();
    let err =
        ScoreSet::from_file(TensorFile::decode(&encode(&sections)).unwrap(), &arch).unwrap_err();
    assert!(matches!(&err, Error::Shape { layer, .. } if layer == ids[arch.num_layers() - 1]));

    // unknown section name
    let mut sections: Vec<(&str, &[u32], Payload)> = (0..arch.num_layers())
        .map(|l| (ids[l], good[l].as_slice(), Payload::F64(&raw[l])))
        .collect();
    sections.push(("bogus", &[1], Payload::F64(&[0.0])));
    let err =
        ScoreSet::from_file(TensorFile::decode(&encode(&sections)).unwrap(), &arch).unwrap_err();
    assert!(err.is_input_error());

    // duplicated section
    let mut sections: Vec<(&str, &[u32], Payload)> = (0..arch.num_layers())
        .map(|l| (ids[l], good[l].as_slice(), Payload::F64(&raw[l])))
        .collect();
    sections.push((ids[0], good[0].as_slice(), Payload::F64(&raw[0])));
    let err =
        ScoreSet::from_file(TensorFile::decode(&encode(&sections)).unwrap(), &arch).unwrap_err();
    assert!(matches!(err, Error::Format(_)));

    // u8 payload where scores are expected
    let bytes: Vec<Vec<u8>> = raw.iter().map(|l| vec![1u8; l.len()]).collect();
    let sections: Vec<(&str, &[u32], Payload)> = (0..arch.num_layers())
        .map(|l| (ids[l], good[l].as_slice(), Payload::U8(&bytes[l])))
        .collect();
    let err =
        ScoreSet::from_file(TensorFile::decode(&encode(&sections)).unwrap(), &arch).unwrap_err();
    assert!(matches!(err, Error::Format(_)));
}

#[test]
fn framing_errors() {
    let arch = lenet5();
    let bytes = score_bytes(&arch, &index_scores(&arch));
    assert!(TensorFile::decode(&bytes).is_ok());

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    let mut bad_version = bytes.clone();
    bad_version[4] = 9;
    let truncated = &bytes[..bytes.len() - 3];
    let mut trailing = bytes.clone();
    trailing.push(0);
    for b in [
        &bad_magic[..],
        &bad_version[..],
        truncated,
        &trailing[..],
        &[][..],
    ] {
        let err = TensorFile::decode(b).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err}");
        assert!(err.is_input_error());
    }

    let mut bad_dtype = encode(&[("a", &[2], Payload::U8(&[0, 1]))]);
    let at = 4 + 2 + 4 + 2 + 1;
    bad_dtype[at] = 7;
    assert!(matches!(
        TensorFile::decode(&bad_dtype),
        Err(Error::Format(_))
    ));
}

#[test]
fn masks_round_trip_and_reject_non_binary() {
    let arch = lenet5();
    let ids = arch.layer_ids();
    let dims: Vec<Vec<u32>> = (0..arch.num_layers()).map(|l| dims32(&arch, l)).collect();
    let bytes: Vec<Vec<u8>> = arch
        .param_counts()
        .iter()
        .map(|&n| (0..n).map(|i| (i % 3 == 0) as u8).collect())
        .collect();
    let sections: Vec<(&str, &[u32], Payload)> = (0..arch.num_layers())
        .map(|l| (ids[l], dims[l].as_slice(), Payload::U8(&bytes[l])))
        .collect();
    let encoded = encode(&sections);
    let mask = MaskSet::from_file(TensorFile::decode(&encoded).unwrap(), &arch).unwrap();
    for (l, layer) in mask.layers().iter().enumerate() {
        assert!(layer.iter().enumerate().all(|(i, &k)| k == (i % 3 == 0)));
        assert_eq!(layer.len(), arch.param_counts()[l]);
    }
    assert_eq!(mask.to_file(&arch).encode().unwrap(), encoded);

    let mut twos = bytes.clone();
    twos[3][0] = 2;
    let sections: Vec<(&str, &[u32], Payload)> = (0..arch.num_layers())
        .map(|l| (ids[l], dims[l].as_slice(), Payload::U8(&twos[l])))
        .collect();
    let err =
        MaskSet::from_file(TensorFile::decode(&encode(&sections)).unwrap(), &arch).unwrap_err();
    assert!(
        matches!(err, Error::Format(ref m) if m.contains(ids[3])),
        "{err}"
    );
}

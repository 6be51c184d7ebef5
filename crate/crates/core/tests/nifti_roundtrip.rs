//! File-format round trips, cross-checked against the `nifti` crate as an
//! independent implementation of the same format.

use byteorder::{BigEndian, ByteOrder};
use ndarray::{Array3, ShapeBuilder};
use nifti::{IntoNdArray, NiftiObject, NiftiVolume, ReaderOptions};
use sinuskit::nifti::{
    read_labelmap, read_volume, read_volume_path, write_labelmap, write_labelmap_path,
    write_volume, write_volume_path,
};
use sinuskit::phantom::standard_phantom;
use sinuskit::volume::{DataType, Endianness, ScalarData, VolumeImage};

fn sample_data(dt: DataType, n: usize) -> ScalarData {
    match dt {
        DataType::U8 => ScalarData::U8((0..n).map(|i| (i % 251) as u8).collect()),
        DataType::I16 => ScalarData::I16((0..n).map(|i| (i as i64 % 30000 - 15000) as i16).collect()),
        DataType::I32 => ScalarData::I32((0..n).map(|i| (i as i64 * 9973 - 40000) as i32).collect()),
        DataType::F32 => ScalarData::F32((0..n).map(|i| i as f32 * 0.25 - 100.0).collect()),
        DataType::F64 => ScalarData::F64((0..n).map(|i| i as f64 * 0.125 - 1e6).collect()),
    }
}

#[test]
fn write_read_write_is_byte_identical_for_every_type() {
    let dims = [5, 4, 3];
    let spacing = [0.7, 1.0, 1.3];
    let n = dims.iter().product();
    for dt in [DataType::U8, DataType::I16, DataType::I32, DataType::F32, DataType::F64] {
        let volume = VolumeImage::new(dims, spacing, sample_data(dt, n)).unwrap();
        for compress in [false, true] {
            let mut first = Vec::new();
            write_volume(&volume, &mut first, compress).unwrap();
            let reread = read_volume(first.as_slice()).unwrap();
            assert_eq!(reread.data_type(), dt);
            assert_eq!(reread.dims(), dims);
            let mut second = Vec::new();
            write_volume(&reread, &mut second, compress).unwrap();
            assert_eq!(first, second, "{dt:?} compress={compress}");
        }
    }
}

#[test]
fn label_write_read_write_is_byte_identical() {
    let labels = standard_phantom().unwrap().labels;
    for compress in [false, true] {
        let mut first = Vec::new();
        write_labelmap(&labels, &mut first, compress).unwrap();
        let reread = read_labelmap(first.as_slice()).unwrap();
        assert_eq!(reread.labels(), labels.labels());
        let mut second = Vec::new();
        write_labelmap(&reread, &mut second, compress).unwrap();
        assert_eq!(first, second, "compress={compress}");
    }
}

/// Minimal single-file image, big-endian, sform only: 3x2x4 float32 with
/// anisotropic spacing and voxel value 100i + 10j + k.
fn craft_big_endian_file() -> Vec<u8> {
    let (dims, spacing) = ([3usize, 2, 4], [0.5f32, 1.25, 2.0]);
    let mut h = vec![0u8; 352];
    BigEndian::write_i32(&mut h[0..], 348);
    let dim = [3i16, dims[0] as i16, dims[1] as i16, dims[2] as i16, 1, 1, 1, 1];
    for (axis, d) in dim.iter().enumerate() {
        BigEndian::write_i16(&mut h[40 + 2 * axis..], *d);
    }
    BigEndian::write_i16(&mut h[70..], 16); // float32
    BigEndian::write_i16(&mut h[72..], 32);
    let pixdim = [1.0f32, spacing[0], spacing[1], spacing[2], 0.0, 0.0, 0.0, 0.0];
    for (axis, p) in pixdim.iter().enumerate() {
        BigEndian::write_f32(&mut h[76 + 4 * axis..], *p);
    }
    BigEndian::write_f32(&mut h[108..], 352.0); // vox_offset
    BigEndian::write_f32(&mut h[112..], 1.0); // scl_slope
    BigEndian::write_i16(&mut h[254..], 1); // sform_code
    BigEndian::write_f32(&mut h[280..], spacing[0]); // srow_x
    BigEndian::write_f32(&mut h[300..], spacing[1]); // srow_y
    BigEndian::write_f32(&mut h[320..], spacing[2]); // srow_z
    h[344..348].copy_from_slice(b"n+1\0");
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let mut cell = [0u8; 4];
                BigEndian::write_f32(&mut cell, (100 * i + 10 * j + k) as f32);
                h.extend_from_slice(&cell);
            }
        }
    }
    h
}

#[test]
fn big_endian_files_read_correctly_and_round_trip() {
    let file = craft_big_endian_file();
    let volume = read_volume(file.as_slice()).unwrap();
    assert_eq!(volume.endianness(), Endianness::Big);
    assert_eq!(volume.dims(), [3, 2, 4]);
    assert_eq!(volume.spacing(), [0.5, 1.25, 2.0]);
    assert!(volume.orientation().is_canonical());
    for k in 0..4 {
        for j in 0..2 {
            for i in 0..3 {
                let linear = volume.linear_index(i, j, k);
                assert_eq!(volume.value(linear), (100 * i + 10 * j + k) as f64);
            }
        }
    }

    let mut first = Vec::new();
    write_volume(&volume, &mut first, false).unwrap();
    let reread = read_volume(first.as_slice()).unwrap();
    assert_eq!(reread.endianness(), Endianness::Big);
    let mut second = Vec::new();
    write_volume(&reread, &mut second, false).unwrap();
    assert_eq!(first, second);
}

#[test]
fn third_party_reader_agrees_on_big_endian_input() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("be.nii");
    std::fs::write(&path, craft_big_endian_file()).unwrap();

    let ours = read_volume_path(&path).unwrap();
    let theirs = ReaderOptions::new().read_file(&path).unwrap();
    assert_eq!(theirs.volume().dim(), &[3, 2, 4]);
    let array = theirs.into_volume().into_ndarray::<f64>().unwrap();
    for k in 0..4 {
        for j in 0..2 {
            for i in 0..3 {
                assert_eq!(array[[i, j, k]], ours.value(ours.linear_index(i, j, k)));
            }
        }
    }
}

#[test]
fn third_party_reader_agrees_on_our_phantom_files() {
    let phantom = standard_phantom().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let image_path = dir.path().join("image.nii.gz");
    let mask_path = dir.path().join("mask.nii");
    write_volume_path(&phantom.image, &image_path).unwrap();
    write_labelmap_path(&phantom.labels, &mask_path).unwrap();

    let object = ReaderOptions::new().read_file(&image_path).unwrap();
    let header = object.header();
    assert_eq!(&header.dim[..4], &[3, 64, 64, 64]);
    assert_eq!(header.datatype, 16);
    assert_eq!(&header.pixdim[1..4], &[1.0, 1.0, 1.0]);
    let array = object.into_volume().into_ndarray::<f32>().unwrap();
    let image = &phantom.image;
    for k in 0..64 {
        for j in 0..64 {
            for i in 0..64 {
                let ours = image.raw_value(image.linear_index(i, j, k)) as f32;
                assert_eq!(array[[i, j, k]], ours, "voxel ({i},{j},{k})");
            }
        }
    }

    let object = ReaderOptions::new().read_file(&mask_path).unwrap();
    assert_eq!(object.header().datatype, 2);
    let array = object.into_volume().into_ndarray::<u8>().unwrap();
    let labels = &phantom.labels;
    for k in 0..64 {
        for j in 0..64 {
            for i in 0..64 {
                let ours = labels.labels()[labels.linear_index(i, j, k)];
                assert_eq!(array[[i, j, k]], ours, "voxel ({i},{j},{k})");
            }
        }
    }
}

#[test]
fn our_reader_reads_third_party_files() {
    let dir = tempfile::tempdir().unwrap();
    let expected = |i: usize, j: usize, k: usize| (i as f32) + 10.0 * (j as f32) + 100.0 * (k as f32);
    let array = Array3::from_shape_fn((4, 5, 6).f(), |(i, j, k)| expected(i, j, k));

    for name in ["plain.nii", "compressed.nii.gz"] {
        let path = dir.path().join(name);
        nifti::writer::WriterOptions::new(&path)
            .compress(name.ends_with(".gz"))
            .write_nifti(&array)
            .unwrap();
        let volume = read_volume_path(&path).unwrap();
        assert_eq!(volume.dims(), [4, 5, 6]);
        assert_eq!(volume.spacing(), [1.0, 1.0, 1.0]);
        assert_eq!(volume.data_type(), DataType::F32);
        assert!(volume.orientation().is_canonical());
        for k in 0..6 {
            for j in 0..5 {
                for i in 0..4 {
                    let linear = volume.linear_index(i, j, k);
                    assert_eq!(volume.value(linear) as f32, expected(i, j, k), "{name} ({i},{j},{k})");
                }
            }
        }
    }
}

//! CAM frames against a byte-level model of the documented layout.

mod oracles;

use edm_core::cam::{decode_cam, decode_fields, encode_fields, CamFields, StationType, CAM_FRAME_LEN};
use edm_core::{GeoPoint, HexGrid};
use oracles::quantized;
use proptest::prelude::*;

#[allow(clippy::too_many_arguments)]
fn frame_by_hand(id: u32, gen: u64, lat_q: i32, lon_q: i32, ty: u8, heading_q: u16, speed_q: u16, accel_q: i16) -> Vec<u8> {
    let mut v = vec![0xCA, 0x01];
    v.extend(id.to_le_bytes());
    v.extend(gen.to_le_bytes());
    v.extend(lat_q.to_le_bytes());
    v.extend(lon_q.to_le_bytes());
    v.push(ty);
    v.extend(heading_q.to_le_bytes());
    v.extend(speed_q.to_le_bytes());
    v.extend(accel_q.to_le_bytes());
    v.extend([0u8; 5]);
    v
}

fn arb_fields() -> impl Strategy<Value = CamFields> {
    (
        any::<u32>(),
        1u64..u64::MAX,
        -84.9..84.9f64,
        -180.0..180.0f64,
        prop::sample::select(StationType::ALL.to_vec()),
        0.0..360.0f64,
        0.0..655.0f64,
        -3276.0..3276.0f64,
    )
        .prop_map(|(station_id, gen_time_ms, lat, lon, station_type, heading_deg, speed_mps, accel_mps2)| CamFields {
            station_id,
            gen_time_ms,
            lat,
            lon,
            station_type,
            heading_deg,
            speed_mps,
            accel_mps2,
        })
}

#[test]
fn golden_frame() {
    let f = CamFields {
        station_id: 0x0102_0304,
        gen_time_ms: 1_700_000_000_123,
        lat: 40.4168,
        lon: -3.7038,
        station_type: StationType::Truck,
        heading_deg: 90.0,
        speed_mps: 13.89,
        accel_mps2: -1.5,
    };
    let expect = frame_by_hand(
        0x0102_0304,
        1_700_000_000_123,
        404_168_000,
        -37_038_000,
        StationType::Truck.code(),
        900,
        1389,
        -15,
    );
    assert_eq!(expect.len(), CAM_FRAME_LEN);
    assert_eq!(encode_fields(&f).unwrap().to_vec(), expect);
    assert_eq!(decode_fields(&expect).unwrap(), f);
}

#[test]
fn nonzero_reserved_bytes_are_ignored() {
    let mut b = frame_by_hand(1, 1, 0, 0, StationType::Car.code(), 0, 0, 0);
    b[30] = 0xFF;
    assert!(decode_fields(&b).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4_096))]

    #[test]
    fn quantization_matches_model(f in arb_fields()) {
        let d = decode_fields(&encode_fields(&f).unwrap()).unwrap();
        let (lat, lon, heading, speed, accel) = quantized(f.lat, f.lon, f.heading_deg, f.speed_mps, f.accel_mps2);
        prop_assert_eq!((d.station_id, d.gen_time_ms, d.station_type), (f.station_id, f.gen_time_ms, f.station_type));
        prop_assert!((d.lat - lat).abs() < 1e-12 && (d.lon - lon).abs() < 1e-12);
        prop_assert!((d.heading_deg - heading).abs() < 1e-9);
        prop_assert!((d.speed_mps - speed).abs() < 1e-9 && (d.accel_mps2 - accel).abs() < 1e-9);
        prop_assert!((d.lat - f.lat).abs() <= 0.5e-7 + 1e-12);
    }

    #[test]
    fn encoding_is_idempotent(f in arb_fields()) {
        let once = encode_fields(&f).unwrap();
        let twice = encode_fields(&decode_fields(&once).unwrap()).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn decoded_cell_follows_decoded_position(f in arb_fields()) {
        let grid = HexGrid::with_default_area(GeoPoint::new(f.lat.clamp(-80.0, 80.0), 0.0).unwrap()).unwrap();
        let m = decode_cam(&encode_fields(&f).unwrap(), &grid).unwrap();
        prop_assert_eq!(m.cell, grid.cell_of(m.fields.position().unwrap()).unwrap());
    }

    #[test]
    fn any_single_byte_corruption_is_handled(f in arb_fields(), at in 0usize..CAM_FRAME_LEN, byte in any::<u8>()) {
        let mut b = encode_fields(&f).unwrap();
        b[at] = byte;
        if let Ok(d) = decode_fields(&b) {
            prop_assert_eq!(encode_fields(&d).map(|e| e[..29] == b[..29]), Ok(true));
        }
    }
}

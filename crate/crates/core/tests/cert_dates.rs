use chrono::{NaiveDate, TimeZone, Utc};
use proptest::prelude::*;
use tlsxai::craft::{CertSpec, DerTime};
use tlsxai::tls::{cert_validity_days, civil_from_days, days_from_civil, parse_der_time};

fn epoch_days(d: NaiveDate) -> i64 {
    (d - NaiveDate::from_ymd_opt(1970, 1, 1).unwrap()).num_days()
}

proptest! {
    #[test]
    fn civil_days_agree_with_chrono(days in -200_000i64..200_000) {
        let date = NaiveDate::from_ymd_opt(1970, 1, 1).unwrap() + chrono::Duration::days(days);
        let (y, m, d) = civil_from_days(days);
        prop_assert_eq!((y, m, d), (i64::from(chrono::Datelike::year(&date)), chrono::Datelike::month(&date), chrono::Datelike::day(&date)));
        prop_assert_eq!(days_from_civil(y, m, d), epoch_days(date));
    }

    #[test]
    fn validity_days_match_chrono(start in 0i64..3_000_000_000, span in 0i64..400_000_000, generalized in any::<bool>()) {
        let (nb, na) = (start, start + span);
        let mut spec = CertSpec::new("issuer", "subject", nb, na);
        if generalized {
            spec.not_before = DerTime::Generalized(nb);
            spec.not_after = DerTime::Generalized(na);
        }
        let got = cert_validity_days(&spec.encode()).unwrap();
        let a = Utc.timestamp_opt(nb, 0).unwrap();
        let b = Utc.timestamp_opt(na, 0).unwrap();
        prop_assert_eq!(got.days, (b - a).num_days());
        prop_assert!(!got.self_signed);
    }
}

#[test]
fn utc_time_century_window() {
    assert_eq!(parse_der_time(0x17, b"500101000000Z").unwrap(), Utc.with_ymd_and_hms(1950, 1, 1, 0, 0, 0).unwrap().timestamp());
    assert_eq!(parse_der_time(0x17, b"491231235959Z").unwrap(), Utc.with_ymd_and_hms(2049, 12, 31, 23, 59, 59).unwrap().timestamp());
    assert_eq!(parse_der_time(0x18, b"20500101000000.5Z").unwrap(), Utc.with_ymd_and_hms(2050, 1, 1, 0, 0, 0).unwrap().timestamp());
    assert!(parse_der_time(0x17, b"5001010000Z").is_err());
}

#[test]
fn reversed_validity_is_rejected() {
    let der = CertSpec::new("a", "a", 2_000_000, 1_000_000).encode();
    assert!(cert_validity_days(&der).is_err());
    let ok = CertSpec::new("a", "a", 0, 86_400 * 10 - 1).encode();
    let v = cert_validity_days(&ok).unwrap();
    assert_eq!(v.days, 9);
    assert!(v.self_signed);
}

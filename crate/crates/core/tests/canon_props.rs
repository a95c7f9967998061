use proptest::prelude::*;
use trustnet_core::{clean, PolicyTable};
use url::Url;

fn host() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("example.com".to_string()),
        Just("WWW.Example.COM".to_string()),
        Just("www.youtube.com".to_string()),
        Just("news.ycombinator.com".to_string()),
        Just("www.facebook.com".to_string()),
        Just("bbc.co.uk".to_string()),
        Just("127.0.0.1".to_string()),
        "[a-z]{1,8}\\.(org|net|io)",
    ]
}

fn segment() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-zA-Z0-9_.~-]{1,10}",
        Just("index.html".to_string()),
        Just("%c3%a9t%2f".to_string()),
        Just("photo".to_string()),
        Just("watch".to_string()),
        Just("item".to_string()),
        Just("".to_string()),
    ]
}

fn param() -> impl Strategy<Value = String> {
    let name = prop_oneof![
        Just("v"),
        Just("id"),
        Just("fbid"),
        Just("comment_id"),
        Just("utm_source"),
        Just("fbclid"),
        Just("t"),
        Just("p"),
    ];
    (name, "[a-zA-Z0-9%]{0,6}").prop_map(|(n, v)| format!("{n}={v}"))
}

prop_compose! {
    fn fuzzed_url()(
        scheme in prop_oneof![Just("http"), Just("https")],
        host in host(),
        port in prop_oneof![Just(String::new()), Just(":80".to_string()), Just(":443".to_string()), Just(":8080".to_string())],
        segments in prop::collection::vec(segment(), 0..4),
        trailing in prop_oneof![Just(""), Just("/"), Just("/index.html")],
        params in prop::collection::vec(param(), 0..4),
        fragment in prop_oneof![Just(String::new()), "#[a-z!/]{0,5}"],
    ) -> String {
        let mut s = format!("{scheme}://{host}{port}/{}{trailing}", segments.join("/"));
        if !params.is_empty() {
            s.push('?');
            s.push_str(&params.join("&"));
        }
        s.push_str(&fragment);
        s
    }
}

prop_compose! {
    fn plain_url()(
        host in "[a-z]{1,8}\\.(com|org)",
        segments in prop::collection::vec("[a-z0-9]{1,6}", 0..3),
    ) -> String {
        format!("https://{host}/{}", segments.join("/"))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn canonicalize_is_idempotent(raw in fuzzed_url()) {
        let table = PolicyTable::default();
        let once = table.canonicalize_str(&raw).unwrap();
        let twice = table.canonicalize_str(once.as_str()).unwrap();
        prop_assert_eq!(&once, &twice, "input {}", raw);
        prop_assert!(Url::parse(once.as_str()).is_ok());
    }

    #[test]
    fn variations_fold_to_one_key(raw in plain_url()) {
        let table = PolicyTable::default();
        let base = table.canonicalize_str(&raw).unwrap();
        let trimmed = raw.trim_end_matches('/');
        let variants = [
            format!("{trimmed}/"),
            format!("{trimmed}/index.html"),
            raw.replacen("https://", "http://", 1),
            {
                let u = Url::parse(&raw).unwrap();
                format!("https://{}{}", u.host_str().unwrap().to_uppercase(), u.path())
            },
            format!("{raw}#section"),
            format!("{raw}?utm_source=x&fbclid=y"),
        ];
        for v in variants {
            prop_assert_eq!(&table.canonicalize_str(&v).unwrap(), &base, "variant {}", v);
        }
    }

    #[test]
    fn host_alias_form_folds(path in "[a-z]{1,6}") {
        let table = PolicyTable::default();
        prop_assert_eq!(
            table.canonicalize_str(&format!("http://www.bbc.co.uk/{path}/")).unwrap(),
            table.canonicalize_str(&format!("https://www.bbc.com/{path}")).unwrap()
        );
    }

    #[test]
    fn kept_params_exactly_retained_sorted(
        values in prop::collection::vec(("(v|t|utm_medium|list)", "[a-z0-9]{1,4}"), 0..6)
    ) {
        let table = PolicyTable::default();
        let query: Vec<String> = values.iter().map(|(n, v)| format!("{n}={v}")).collect();
        let raw = format!("https://www.youtube.com/watch?{}", query.join("&"));
        let key = table.canonicalize_str(&raw).unwrap();
        let mut expected: Vec<String> = values
            .iter()
            .filter(|(n, _)| n == "v")
            .map(|(n, v)| format!("{n}={v}"))
            .collect();
        expected.sort();
        let got: Vec<String> = Url::parse(key.as_str())
            .unwrap()
            .query()
            .map(|q| q.split('&').map(String::from).collect())
            .unwrap_or_default();
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn clean_is_identity_on_absolute_urls(raw in fuzzed_url(), pad in "[ \t\n]{0,2}") {
        let base = Url::parse("https://elsewhere.example/page").unwrap();
        let parsed = Url::parse(&raw).unwrap();
        prop_assert_eq!(clean(&format!("{pad}{raw}{pad}"), &base).unwrap(), parsed);
    }
}

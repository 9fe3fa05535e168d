mod common;

use common::{start_reference, Client};
use juree_core::{LexiconScorer, RiskLabel};

const WORDS: [&str; 6] = ["loan", "bomb", "pizza", "jailbreak", "hopeless", "refund"];

/// Text whose reference scores encode `(client, request)`: the hit counts per
/// class spell out the tag.
fn tagged(client: usize, request: usize) -> String {
    let counts = [client % 5, client / 5 % 5, request % 5, request / 5 % 5, (client + request) % 3, 1];
    let mut words = vec![format!("c{client}r{request}")];
    for (w, n) in WORDS.iter().zip(counts) {
        words.extend(std::iter::repeat_n(w.to_string(), n));
    }
    words.join(" ")
}

#[test]
fn sixty_four_clients_never_see_each_others_scores() {
    let server = start_reference();
    let reference = LexiconScorer::default();
    let failures: usize = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..64)
            .map(|client| {
                let c = Client::new(&server);
                let reference = &reference;
                scope.spawn(move || {
                    let mut bad = 0;
                    for request in 0..20 {
                        let texts: Vec<String> = (0..1 + request % 3).map(|k| tagged(client, request * 3 + k)).collect();
                        let body = if texts.len() == 1 {
                            serde_json::json!({ "text": texts[0] })
                        } else {
                            serde_json::json!({ "texts": texts })
                        };
                        let (status, v) = c.json("/v1/moderate", &body.to_string());
                        assert_eq!(status, 200);
                        let results = v["results"].as_array().unwrap();
                        assert_eq!(results.len(), texts.len());
                        for (t, r) in texts.iter().zip(results) {
                            let want = reference.score_text(t);
                            for label in RiskLabel::ALL {
                                if r["scores"][label.as_str()].as_f64() != Some(want.get(label)) {
                                    bad += 1;
                                }
                            }
                        }
                    }
                    bad
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).sum()
    });
    assert_eq!(failures, 0);
    let (_, m) = Client::new(&server).get_json("/metricsz");
    assert_eq!(m["requests_total"], 64 * 20);
}

/// Anchored glob match: `*` is any (possibly empty) run, `?` any one char.
pub fn glob_match(pattern: &str, text: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let t: Vec<char> = text.chars().collect();
    let (mut pi, mut ti) = (0, 0);
    // Position of the last `*` seen and the text index it was tried at.
    let mut star: Option<(usize, usize)> = None;
    while ti < t.len() {
        if pi < p.len() && (p[pi] == '?' || p[pi] == t[ti]) {
            pi += 1;
            ti += 1;
        } else if pi < p.len() && p[pi] == '*' {
            star = Some((pi, ti));
            pi += 1;
        } else if let Some((sp, st)) = star {
            pi = sp + 1;
            ti = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&c| c == '*')
}

#[cfg(test)]
mod tests {
    use super::glob_match;
    use proptest::prelude::*;

    fn naive(p: &[char], t: &[char]) -> bool {
        match p.first() {
            None => t.is_empty(),
            Some('*') => (0..=t.len()).any(|k| naive(&p[1..], &t[k..])),
            Some('?') => !t.is_empty() && naive(&p[1..], &t[1..]),
            Some(c) => t.first() == Some(c) && naive(&p[1..], &t[1..]),
        }
    }

    #[test]
    fn cases() {
        assert!(glob_match("enc.*.weight", "enc.0.attn.q.weight"));
        assert!(glob_match("*", ""));
        assert!(glob_match("*bias", "enc.0.bias"));
        assert!(!glob_match("enc.?.weight", "enc.10.weight"));
        assert!(glob_match("enc.??.weight", "enc.10.weight"));
        assert!(!glob_match("enc", "enc.0"));
        assert!(!glob_match("", "a"));
    }

    proptest! {
        #[test]
        fn agrees_with_recursive_definition(p in "[ab.*?]{0,7}", t in "[ab.]{0,9}") {
            let pc: Vec<char> = p.chars().collect();
            let tc: Vec<char> = t.chars().collect();
            prop_assert_eq!(glob_match(&p, &t), naive(&pc, &tc));
        }
    }
}

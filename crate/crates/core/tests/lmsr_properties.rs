use proptest::prelude::*;
use replimarket::lmsr::cost_potential;
use replimarket::{Account, Action, MarketState, Order, Outcome, Owner, Side};

#[derive(Debug, Clone, Copy)]
struct Step {
    trader: usize,
    side: Side,
    action: Action,
}

fn step() -> impl Strategy<Value = Step> {
    (0usize..3, any::<bool>(), 0u8..4).prop_map(|(trader, yes, a)| Step {
        trader,
        side: if yes { Side::Yes } else { Side::No },
        // buys three times as likely as sells so books actually build up
        action: if a == 0 { Action::Sell } else { Action::Buy },
    })
}

fn accounts() -> Vec<Account> {
    (0..3).map(|i| Account::new(Owner::Agent(i), 1e6)).collect()
}

fn play(state: &mut MarketState, accts: &mut [Account], steps: &[Step]) -> f64 {
    let mut paid = 0.0;
    for s in steps {
        let order = Order {
            owner: accts[s.trader].owner.clone(),
            side: s.side,
            action: s.action,
            tick_submitted: state.tick,
        };
        if let Ok(t) = state.execute(&mut accts[s.trader], &order) {
            paid -= t.cash_delta;
        }
    }
    paid
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn cost_equals_potential_difference(
        b in 1.0f64..500.0,
        steps in prop::collection::vec(step(), 0..80),
    ) {
        let mut state = MarketState::new(b);
        let mut accts = accounts();
        let start = state.potential();
        let paid = play(&mut state, &mut accts, &steps);
        let diff = state.potential() - start;
        prop_assert!((paid - diff).abs() <= 1e-9 * diff.abs().max(1.0), "{paid} vs {diff}");
    }

    #[test]
    fn prices_are_a_distribution(
        b in 0.5f64..1000.0,
        q_yes in -2000.0f64..2000.0,
        q_no in -2000.0f64..2000.0,
    ) {
        let s = MarketState::with_quantities(b, q_yes, q_no);
        let (y, n) = (s.spot_price(Side::Yes), s.spot_price(Side::No));
        prop_assert!((0.0..=1.0).contains(&y) && (0.0..=1.0).contains(&n));
        prop_assert!((y + n - 1.0).abs() <= 1e-12);
        // strictly interior whenever the gap is representable
        if ((q_yes - q_no) / b).abs() < 30.0 {
            prop_assert!(y > 0.0 && y < 1.0);
        }
    }

    #[test]
    fn buying_raises_own_price(
        b in 1.0f64..200.0,
        q_yes in -100.0f64..100.0,
        q_no in -100.0f64..100.0,
        yes in any::<bool>(),
    ) {
        // beyond ~36 units of b the prices saturate at 0 or 1 in f64
        prop_assume!(((q_yes - q_no) / b).abs() < 30.0);
        let side = if yes { Side::Yes } else { Side::No };
        let mut s = MarketState::with_quantities(b, q_yes, q_no);
        let mut acct = Account::new(Owner::Human("m".into()), 1e9);
        let before = s.spot_price(side);
        let cost = s.trade_cost(side, Action::Buy);
        let order = Order { owner: acct.owner.clone(), side, action: Action::Buy, tick_submitted: 0 };
        s.execute(&mut acct, &order).unwrap();
        let after = s.spot_price(side);
        prop_assert!(after > before);
        prop_assert!(s.spot_price(side.opposite()) < 1.0 - before + 1e-15);
        // a share costs strictly between the old and new price
        prop_assert!(cost > before && cost < after);
    }

    #[test]
    fn maker_loss_bounded(
        b in 1.0f64..100.0,
        steps in prop::collection::vec(step(), 0..200),
    ) {
        let mut state = MarketState::new(b);
        let mut accts = accounts();
        play(&mut state, &mut accts, &steps);
        for outcome in [Outcome::Replicated, Outcome::NotReplicated] {
            prop_assert!(state.maker_profit(outcome) >= -state.loss_bound() - 1e-9);
        }
    }

    #[test]
    fn cash_is_conserved(
        b in 1.0f64..100.0,
        steps in prop::collection::vec(step(), 0..120),
        yes_wins in any::<bool>(),
    ) {
        let mut state = MarketState::new(b);
        let mut accts = accounts();
        play(&mut state, &mut accts, &steps);
        let traders: f64 = accts.iter().map(|a| a.cash - 1e6).sum();
        prop_assert!((traders + state.collected()).abs() <= 1e-6);
        let outcome = if yes_wins { Outcome::Replicated } else { Outcome::NotReplicated };
        let maker = state.maker_profit(outcome);
        state.settle(accts.iter_mut(), outcome).unwrap();
        let traders: f64 = accts.iter().map(|a| a.cash - 1e6).sum();
        prop_assert!((traders + maker).abs() <= 1e-6);
    }

    #[test]
    fn potential_is_symmetric_and_translation_covariant(
        b in 1.0f64..100.0,
        x in -500.0f64..500.0,
        y in -500.0f64..500.0,
        k in -500.0f64..500.0,
    ) {
        let c = cost_potential(x, y, b);
        prop_assert!((c - cost_potential(y, x, b)).abs() <= 1e-9 * c.abs().max(1.0));
        let shifted = cost_potential(x + k, y + k, b);
        prop_assert!((shifted - c - k).abs() <= 1e-9 * shifted.abs().max(1.0));
    }
}

#[test]
fn every_buy_sell_path_of_length_six_stays_within_bound() {
    // exhaustive over 4^6 single-trader paths, rejected sells included
    let moves = [
        (Side::Yes, Action::Buy),
        (Side::Yes, Action::Sell),
        (Side::No, Action::Buy),
        (Side::No, Action::Sell),
    ];
    for code in 0..4usize.pow(6) {
        let mut state = MarketState::new(2.0);
        let mut acct = Account::new(Owner::Agent(0), 100.0);
        let mut c = code;
        for _ in 0..6 {
            let (side, action) = moves[c % 4];
            c /= 4;
            let order = Order {
                owner: Owner::Agent(0),
                side,
                action,
                tick_submitted: 0,
            };
            let _ = state.execute(&mut acct, &order);
        }
        for outcome in [Outcome::Replicated, Outcome::NotReplicated] {
            assert!(
                state.maker_profit(outcome) >= -state.loss_bound() - 1e-12,
                "path {code}"
            );
        }
        assert!((acct.cash - 100.0 + state.collected()).abs() < 1e-12);
    }
}

#[test]
fn loss_bound_is_approached_by_one_sided_buying() {
    let b = 5.0;
    let mut state = MarketState::new(b);
    let mut acct = Account::new(Owner::Agent(0), 1e9);
    for _ in 0..400 {
        let order = Order {
            owner: Owner::Agent(0),
            side: Side::Yes,
            action: Action::Buy,
            tick_submitted: 0,
        };
        state.execute(&mut acct, &order).unwrap();
    }
    let loss = -state.maker_profit(Outcome::Replicated);
    assert!(loss < state.loss_bound());
    assert!(state.loss_bound() - loss < 1e-9, "{loss}");
}

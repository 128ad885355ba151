//! Walks one binary market through a few single-share trades and settles it.
//!
//!     cargo run -p replimarket --example lmsr_pricing

use replimarket::{Account, Action, MarketState, Order, Outcome, Owner, Side};

fn main() {
    let mut market = MarketState::new(100.0);
    let mut accounts = vec![
        Account::new(Owner::Human("alice".into()), 25.0),
        Account::new(Owner::Agent(7), 500.0),
    ];

    println!(
        "open: yes={:.4} no={:.4}",
        market.spot_price(Side::Yes),
        market.spot_price(Side::No)
    );

    let script = [
        (0, Side::Yes, Action::Buy),
        (1, Side::No, Action::Buy),
        (0, Side::Yes, Action::Buy),
        (0, Side::No, Action::Sell),
        (0, Side::Yes, Action::Sell),
    ];
    for (who, side, action) in script {
        let acct = &mut accounts[who];
        let order = Order {
            owner: acct.owner.clone(),
            side,
            action,
            tick_submitted: market.tick,
        };
        let name = order.owner.clone();
        match market.execute(acct, &order) {
            Ok(t) => println!(
                "{name:<11} {action} {side:<3}  cash {:+.6}  yes now {:.4}",
                t.cash_delta, t.spot_price_after
            ),
            Err(e) => println!("{name:<11} {action} {side:<3}  rejected: {e}"),
        }
        market.advance_tick();
    }

    println!(
        "maker collected {:.6}, worst-case loss {:.4}",
        market.collected(),
        market.loss_bound()
    );
    let payouts = market
        .settle(accounts.iter_mut(), Outcome::Replicated)
        .unwrap();
    println!("settled R: payouts {payouts:?}");
    for a in &accounts {
        println!("{}: {:.4}", a.owner, a.cash);
    }
}

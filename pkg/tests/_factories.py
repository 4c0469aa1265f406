import itertools

from hypothesis import strategies as st

from mtabudget.core import SECONDS_PER_DAY, ActionEvent, Kind, TouchPoint, UserHistory, WindowConfig

DAY = SECONDS_PER_DAY
AS_OF = 200 * DAY
_seq = itertools.count(1)


def tp(li, ts, cost=0, user="u1", adv="adv", io="io", kind=Kind.IMPRESSION, seq=None):
    return TouchPoint(user, ts, kind, li, io, adv, cost, next(_seq) if seq is None else seq)


def act(ts, value=100, user="u1", adv="adv", io="io", seq=None):
    return ActionEvent(user, ts, adv, io, value, next(_seq) if seq is None else seq)


def window(t_action=7, t_association=30, as_of=AS_OF):
    return WindowConfig(as_of, t_action, t_association)


LINE_ITEMS = ["A", "B", "C", "D"]


@st.composite
def histories(draw, max_tps=10, max_actions=4, line_items=LINE_ITEMS, advertisers=("adv",),
              span_days=45, user="u1"):
    """Small user histories with timestamps on a coarse grid so ties and
    exact window boundaries come up often."""
    grid = st.integers(0, span_days * 4).map(lambda q: AS_OF - q * DAY // 4)
    n_tp = draw(st.integers(0, max_tps))
    tps = [
        tp(draw(st.sampled_from(line_items)), draw(grid), draw(st.integers(0, 9)), user=user,
           adv=draw(st.sampled_from(advertisers)))
        for _ in range(n_tp)
    ]
    n_act = draw(st.integers(0, max_actions))
    acts = [act(draw(grid), draw(st.integers(0, 500)), user=user,
                adv=draw(st.sampled_from(advertisers))) for _ in range(n_act)]
    return UserHistory.build(user, tps, acts)

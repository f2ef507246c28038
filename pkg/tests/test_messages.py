import struct

import pytest

from persecagg import messages
from persecagg.messages import Abort, decode, encode

from roundkit import HandRound


def roundtrip(msg):
    data = encode(msg)
    back = decode(data)
    assert type(back) is type(msg)
    assert encode(back) == data
    return back


def test_every_message_type_roundtrips():
    h = HandRound(n_decryptors=6)
    reports = h.reports()
    for rep in reports.values():
        back = roundtrip(rep)
        assert (back.masked == rep.masked).all() and (back.indicator == rep.indicator).all()
    fwd = h.server.collect(h.tau, reports)
    for f in fwd.values():
        roundtrip(f)
    live = h.dep.decryptors[1:]
    responses = {u: h.decryptors[u].unmask(h.tau, fwd[u]) for u in live}
    for r in responses.values():
        back = roundtrip(r)
        assert (back.emk.present == r.emk.present).all()
        assert {i: (s.x, s.y) for i, s in back.shares.items()} == {i: (s.x, s.y) for i, s in r.shares.items()}
    requests = h.server.unmask(responses)
    for u, req in requests.items():
        back = roundtrip(req)
        assert back.dropped == req.dropped
        roundtrip(h.decryptors[u].recover(h.tau, req))
    assert roundtrip(Abort(3, 7, "dropout list too long")).cause == "dropout list too long"


def test_header_layout():
    data = encode(Abort(5, 9, "x"))
    assert struct.unpack_from(">BII", data) == (messages.TAG_ABORT, 5, 9)


def test_unknown_tag_rejected():
    with pytest.raises(ValueError, match="unknown message tag"):
        decode(b"\x63" + bytes(8))


def test_truncated_message_rejected():
    h = HandRound()
    data = encode(next(iter(h.reports().values())))
    with pytest.raises(ValueError):
        decode(data[:-5])

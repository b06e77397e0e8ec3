import pytest
from hypothesis import given, settings, strategies as st

from invoiceflow.model import (
    REQUIRED_FIELDS,
    CanonicalField,
    CurrencyMismatch,
    FieldValue,
    MalformedAmount,
    Money,
    Overflow,
    PipelineConfig,
    Provenance,
    money_format,
    money_parse,
    money_sum,
    overall_confidence,
)


class TestMoneyParse:
    def test_us_thousands(self):
        assert money_parse("1,234.50", "USD") == Money(123450, "USD")

    def test_zero(self):
        assert money_parse("0", "USD") == Money(0, "USD")

    def test_eu_separators_with_symbol(self):
        # Rightmost of {., ,} with 1-2 trailing digits is the decimal mark;
        # re-formatting the parsed value round-trips through the parser.
        parsed = money_parse("₹ 1.234,50", "INR")
        assert parsed == Money(123450, "INR")
        assert money_parse(money_format(parsed), "INR") == parsed

    def test_symbol_detection(self):
        assert money_parse("$165.00", "EUR") == Money(16500, "USD")
        assert money_parse("EUR 20.00", "USD").currency == "EUR"

    def test_grouping_without_decimals(self):
        assert money_parse("1,234", "USD") == Money(123400, "USD")

    def test_single_fraction_digit(self):
        assert money_parse("165.5", "USD") == Money(16550, "USD")

    def test_negative_forms(self):
        assert money_parse("-12.34", "USD") == Money(-1234, "USD")
        assert money_parse("(12.34)", "USD") == Money(-1234, "USD")

    @pytest.mark.parametrize("raw", ["", "no digits", "1.23.45", "12,34.56", "1,2345"])
    def test_malformed(self, raw):
        with pytest.raises(MalformedAmount):
            money_parse(raw, "USD")

    def test_bad_currency(self):
        with pytest.raises(MalformedAmount):
            Money(100, "usd")
        with pytest.raises(MalformedAmount):
            Money(100, "USDX")


class TestMoneySum:
    def test_simple(self):
        assert money_sum([Money(100, "USD"), Money(250, "USD")]) == Money(350, "USD")

    def test_empty_with_currency(self):
        assert money_sum([], "USD") == Money(0, "USD")

    def test_empty_without_currency(self):
        with pytest.raises(CurrencyMismatch):
            money_sum([])

    def test_mismatch(self):
        with pytest.raises(CurrencyMismatch):
            money_sum([Money(100, "USD"), Money(1, "EUR")])

    def test_overflow(self):
        with pytest.raises(Overflow):
            money_sum([Money(2**62, "USD"), Money(2**62, "USD")])

    @given(st.lists(st.integers(-10**9, 10**9), min_size=1, max_size=20),
           st.randoms(use_true_random=False))
    def test_permutation_invariant(self, minors, rng):
        items = [Money(m, "USD") for m in minors]
        shuffled = list(items)
        rng.shuffle(shuffled)
        assert money_sum(items) == money_sum(shuffled)

    @given(st.lists(st.integers(-10**9, 10**9), min_size=2, max_size=12))
    def test_associative(self, minors):
        items = [Money(m, "USD") for m in minors]
        left = money_sum([money_sum(items[:1]), money_sum(items[1:], "USD")], "USD")
        assert left == money_sum(items)


class TestMoneyRoundTrip:
    @given(st.integers(min_value=-10**12, max_value=10**12))
    @settings(max_examples=300)
    def test_parse_format_identity(self, minor):
        m = Money(minor, "USD")
        assert money_parse(money_format(m), "USD") == m

    @pytest.mark.parametrize("minor", [-10**12, -1, 0, 1, 99, 100, 10**12])
    def test_bounds(self, minor):
        m = Money(minor, "EUR")
        assert money_parse(money_format(m), "EUR") == m


def _fv(field, conf):
    return FieldValue(field, "x", "x", conf, Provenance.LLM)


class TestOverallConfidence:
    def test_min_over_required(self):
        fields = {f: _fv(f, 0.9) for f in REQUIRED_FIELDS}
        fields[CanonicalField.VENDOR_NAME] = _fv(CanonicalField.VENDOR_NAME, 0.4)
        assert overall_confidence(fields) == 0.4

    def test_missing_required_is_zero(self):
        fields = {f: _fv(f, 0.9) for f in REQUIRED_FIELDS[:-1]}
        assert overall_confidence(fields) == 0.0

    @given(st.dictionaries(
        st.sampled_from(list(CanonicalField)),
        st.floats(min_value=0, max_value=1, allow_nan=False),
        min_size=0, max_size=14))
    def test_equals_brute_force(self, confs):
        fields = {f: _fv(f, c) for f, c in confs.items()}
        expected = 1.0
        for f in REQUIRED_FIELDS:
            if f not in fields:
                expected = 0.0
                break
            expected = min(expected, fields[f].confidence)
        assert overall_confidence(fields) == expected


class TestPipelineConfig:
    def test_defaults(self):
        cfg = PipelineConfig()
        assert cfg.review_threshold == 0.85
        assert cfg.ocr_escalation_threshold == 0.80
        assert cfg.target_dpi == 300
        assert cfg.date_policy.value == "day_first"

    @pytest.mark.parametrize("kwargs", [
        {"review_threshold": 0.0},
        {"review_threshold": 1.5},
        {"ocr_escalation_threshold": -0.1},
        {"target_dpi": 71},
        {"target_dpi": 1201},
        {"cascade_metric": "max"},
    ])
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValueError):
            PipelineConfig(**kwargs)

    def test_confidence_bounds_enforced(self):
        with pytest.raises(ValueError):
            FieldValue(CanonicalField.SUBTOTAL, "x", None, 1.2, Provenance.LLM)

"""Tour of exact money arithmetic and the validation checks.

Everything downstream of extraction works in integer minor units, so
arithmetic verification is exact: no float ever touches an amount.
"""

from decimal import Decimal

from invoiceflow.model import CanonicalField, LineItem, Money, money_format, money_parse
from invoiceflow.validate import check_arithmetic_values

# --- parsing printed amounts ------------------------------------------------
# The rightmost of {".", ","} followed by 1-2 digits is the decimal mark,
# which handles US and EU formats without any locale configuration.
for raw in ["1,234.50", "1.234,50", "$165.00", "EUR 99", "(12.34)"]:
    m = money_parse(raw, "USD")
    print(f"{raw!r:>14} -> {m.minor_units:>9} minor units {m.currency}")

# --- arithmetic consistency ---------------------------------------------------
items = [
    LineItem("STEEL BRACKET", Decimal(2), Money(5000, "USD"), Money(10000, "USD")),
    LineItem("RUBBER GASKET", Decimal(1), Money(5000, "USD"), Money(5000, "USD")),
]
values = {
    CanonicalField.SUBTOTAL: Money(15000, "USD"),
    CanonicalField.TAX_RATE: Decimal("0.10"),
    CanonicalField.TAX_AMOUNT: Money(1500, "USD"),
    CanonicalField.TOTAL_AMOUNT: Money(16000, "USD"),   # deliberately wrong
}
report = check_arithmetic_values(values, items)
print("\nvalidation checks (total printed as 160.00 instead of 165.00):")
for check in report.checks:
    flag = "skip" if check.skipped else ("ok" if check.passed else "FAIL")
    print(f"  {check.id:<10} {flag:<5} {check.detail}")

print("\ncorrect total would be:", money_format(Money(16500, "USD")))

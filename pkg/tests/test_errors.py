import warnings

import pytest

from .context import errors


class TestSlowFastError:
    def test_payload_keeps_partial_last(self):
        exc = errors.BlowUpError("boom", details={"partial": {"title": "x"}, "step": 3})
        payload = exc.to_dict()

        assert payload["kind"] == "blow_up"
        assert payload["message"] == "boom"
        assert payload["step"] == 3
        assert list(payload)[-1] == "partial"

    def test_kinds_are_distinct(self):
        kinds = {
            cls.kind
            for cls in (
                errors.ConfigurationError,
                errors.ModelError,
                errors.EvaluationError,
                errors.UnsupportedDimensionError,
                errors.BlowUpError,
                errors.CapabilityError,
                errors.ConditioningError,
                errors.TruncationError,
            )
        }
        assert len(kinds) == 8


class TestWarnOrRaise:
    def test_warns_by_default(self):
        with pytest.warns(errors.TruncationWarning):
            errors.warn_or_raise("tail", errors.TruncationWarning, errors.TruncationError)

    def test_strict_filter_raises_error(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error", errors.TruncationWarning)
            with pytest.raises(errors.TruncationError) as info:
                errors.warn_or_raise("tail", errors.TruncationWarning, errors.TruncationError, details={"T_trunc": 8.0})

        assert info.value.details == {"T_trunc": 8.0}
        assert isinstance(info.value.__cause__, errors.TruncationWarning)

"""
Exceptions
Các lỗi dùng chung cho GrainDoE

Exit codes used by the command line:
    0  success
    1  unexpected error
    2  configuration error
    3  data error
    4  training fault
"""

from typing import Optional


class GrainDoeError(Exception):
    """Lỗi gốc của GrainDoE"""

    exit_code = 1


class ConfigurationError(GrainDoeError, ValueError):
    """Cấu hình hoặc hình dạng tensor không hợp lệ"""

    exit_code = 2


class UnsupportedDesignError(ConfigurationError):
    """Không có cách dựng conference matrix cho bậc yêu cầu"""


class DecodeError(ConfigurationError):
    """Giá trị mã hóa không ánh xạ được sang mức của factor"""

    def __init__(self, factor: str, row: Optional[int], value):
        self.factor = factor
        self.row = row
        self.value = value
        where = f"row {row}" if row is not None else "row"
        super().__init__(f"{where}: factor '{factor}' has no level for coded value {value!r}")


class DataError(GrainDoeError):
    """Dữ liệu đầu vào thiếu, hỏng hoặc không tương thích"""

    exit_code = 3


class LeverageError(DataError):
    """Quan sát có leverage h_ii = 1, PRESS không xác định"""

    def __init__(self, observation: int):
        self.observation = observation
        super().__init__(f"observation {observation} has leverage 1; PRESS is undefined")


class TrainingFault(GrainDoeError, RuntimeError):
    """Loss hoặc gradient không hữu hạn trong quá trình huấn luyện"""

    exit_code = 4

    def __init__(
        self,
        message: str,
        layer_index: Optional[int] = None,
        epoch: Optional[int] = None,
        iteration: Optional[int] = None,
    ):
        self.layer_index = layer_index
        self.epoch = epoch
        self.iteration = iteration
        context = []
        if layer_index is not None:
            context.append(f"layer={layer_index}")
        if epoch is not None:
            context.append(f"epoch={epoch}")
        if iteration is not None:
            context.append(f"iteration={iteration}")
        suffix = f" ({', '.join(context)})" if context else ""
        super().__init__(f"{message}{suffix}")

    def with_context(self, epoch: int, iteration: int) -> "TrainingFault":
        """Gắn thêm epoch/iteration vào lỗi đã có layer index"""
        base = str(self.args[0]).split(" (")[0]
        return TrainingFault(base, layer_index=self.layer_index, epoch=epoch, iteration=iteration)

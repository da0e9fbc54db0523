# GrainDoE
# Phân loại cấu trúc hạt kim loại bằng CNN tinh chỉnh qua thiết kế thí nghiệm

__version__ = "1.0.0"

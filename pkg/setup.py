from setuptools import setup, find_namespace_packages

setup(
    name="caiac",                      # 패키지 이름
    version="0.1.0",                   # 버전
    author="devjun",                   # 작성자
    author_email="jyporse@naver.com",  # 이메일
    description="Causal-action-influence-aware counterfactual data augmentation at desk scale",
    long_description_content_type="text/markdown",
    packages=find_namespace_packages(include=["src", "src.*"]),
    python_requires=">=3.10",
    install_requires=[
        "pydantic>=2.7.1",
        "pydantic-settings>=2.5.2",
        "python-dotenv>=1.0.0",
        "numpy>=2.2.3",                 # 수치 연산
        "pandas>=2.2.3",                # CSV 리포트
        "scipy>=1.11.0",                # logsumexp, 정규분포 밀도
        "scikit-learn>=1.3.0",          # ROC/AUC, 부트스트랩 리샘플링
    ],
    extras_require={
        "test": [
            "pytest>=8.0",
        ],
    },
    entry_points={
        "console_scripts": [
            "caiac=src.app.main:main",   # main 실행 엔트리포인트
        ],
    },
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
)

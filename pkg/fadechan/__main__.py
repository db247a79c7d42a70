from fadechan.cli import main

raise SystemExit(main())
